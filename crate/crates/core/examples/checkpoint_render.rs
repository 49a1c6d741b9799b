//! Short training run, checkpoint round trip, resume, and a rendered
//! trajectory.

use anyhow::Result;
use hamsplat::pipeline::{
    eval, metrics_csv, render_sequence, synth_scene, Checkpoint, SceneKind, SynthConfig,
    TrainConfig, Trainer,
};

fn main() -> Result<()> {
    let out =
        std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "ckpt_out".into()));
    std::fs::create_dir_all(&out)?;
    let synth = synth_scene(&SynthConfig {
        kind: SceneKind::Pendulum,
        frames: 8,
        gaussians: 60,
        resolution: 32,
        ..Default::default()
    })?;
    let data = synth.dataset()?;
    let mut cfg = TrainConfig::toy();
    cfg.iterations = 200;
    cfg.log_every = 50;

    let mut trainer = Trainer::new(cfg, data.clone(), synth.initial_scene(0.02, 1))?;
    for _ in 0..100 {
        trainer.step()?;
    }
    let path = out.join("half.ckpt");
    trainer.checkpoint().save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    println!("saved and reloaded at iteration {}", loaded.iteration);

    let mut resumed = Trainer::resume(loaded, data.clone())?;
    resumed.run(|l| println!("iter {:>4}  loss {:.5}", l.iteration, l.loss))?;
    let ck = resumed.into_checkpoint();
    ck.save(out.join("final.ckpt"))?;
    print!("{}", metrics_csv(&eval(&ck, &data)?));

    let times: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
    render_sequence(&ck, &[synth.camera(0.5)], &times, out.join("frames"))?;
    println!(
        "frames and trajectory.csv written to {}",
        out.join("frames").display()
    );
    Ok(())
}
