//! Trains on the mixed toy scene and reports reconstruction and static drift.

use std::time::Instant;

use anyhow::Result;
use hamsplat::pipeline::{eval, synth_scene, SceneKind, SynthConfig, TrainConfig, Trainer};
use hamsplat::render::format_psnr;

fn main() -> Result<()> {
    let iterations: usize = std::env::args().nth(1).map_or(Ok(5000), |s| s.parse())?;
    let synth = synth_scene(&SynthConfig {
        kind: SceneKind::Mixed,
        ..Default::default()
    })?;
    let data = synth.dataset()?;
    let mut cfg = TrainConfig::toy();
    cfg.iterations = iterations;
    cfg.log_every = 250;
    let start = Instant::now();
    let mut trainer = Trainer::new(cfg, data.clone(), synth.initial_scene(0.02, 1))?;
    trainer.run(|l| {
        println!(
            "iter {:>5}  loss {:.5}  psnr {}  ({:.1}s)",
            l.iteration,
            l.loss,
            format_psnr(l.psnr),
            start.elapsed().as_secs_f64()
        )
    })?;
    let ck = trainer.into_checkpoint();
    let rows = eval(&ck, &data)?;
    let mean = rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64;
    println!("mean psnr {}", format_psnr(mean));
    Ok(())
}
