//! Full model against its two ablations on the mixed toy, plus static drift.

use std::time::Instant;

use anyhow::Result;
use hamsplat::hnn::FieldKind;
use hamsplat::pipeline::{
    eval, step_displacements, synth_scene, SceneKind, SynthConfig, TrainConfig, Trainer,
};
use hamsplat::render::format_psnr;

fn main() -> Result<()> {
    let iterations: usize = std::env::args().nth(1).map_or(Ok(5000), |s| s.parse())?;
    let seed: u64 = std::env::args().nth(2).map_or(Ok(0), |s| s.parse())?;
    let synth = synth_scene(&SynthConfig {
        kind: SceneKind::Mixed,
        seed,
        ..Default::default()
    })?;
    let data = synth.dataset()?;
    let n_static = synth.static_count();
    let only = std::env::var("HS_ONLY").unwrap_or_default();
    for (name, bed, field) in [
        ("full", true, FieldKind::Hamiltonian),
        ("no-bed", false, FieldKind::Hamiltonian),
        ("linear", true, FieldKind::Linear),
    ] {
        if !only.is_empty() && !only.split(',').any(|o| o == name) {
            continue;
        }
        let extra = std::env::var("HS_CFG")
            .unwrap_or_default()
            .replace(';', "\n");
        let mut cfg = TrainConfig::parse_onto(TrainConfig::toy(), &extra)?;
        cfg.iterations = iterations;
        cfg.bed = bed;
        cfg.field = field;
        cfg.seed = seed;
        let start = Instant::now();
        let mut trainer = Trainer::new(cfg, data.clone(), synth.initial_scene(0.02, seed + 1))?;
        trainer.run(|_| {})?;
        let ck = trainer.into_checkpoint();
        let rows = eval(&ck, &data)?;
        let mean = rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64;
        let scenes = data
            .frames()
            .iter()
            .map(|f| ck.deform(f.t))
            .collect::<Result<Vec<_>, _>>()?;
        let steps = step_displacements(&scenes);
        let flat = |range: std::ops::Range<usize>| -> Vec<f64> {
            steps
                .iter()
                .flat_map(|row| row[range.clone()].to_vec())
                .collect()
        };
        let stat = flat(0..n_static);
        let mut dynm = flat(n_static..scenes[0].len());
        dynm.sort_by(f64::total_cmp);
        let static_mean = stat.iter().sum::<f64>() / stat.len() as f64;
        let dyn_median = dynm[dynm.len() / 2];
        let mut err_s = 0.0;
        let mut err_d = 0.0;
        let mut gt_steps = Vec::new();
        for (k, f) in data.frames().iter().enumerate() {
            let traj = f.trajectory.as_ref().unwrap();
            for (i, p) in scenes[k].primitives.iter().enumerate() {
                let e = (0..3)
                    .map(|a| (p.mu[a] - traj[i][a]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if i < n_static {
                    err_s += e
                } else {
                    err_d += e
                }
            }
            if k > 0 {
                let prev = data.frames()[k - 1].trajectory.as_ref().unwrap();
                for i in n_static..traj.len() {
                    gt_steps.push(
                        (0..3)
                            .map(|a| (prev[i][a] - traj[i][a]).powi(2))
                            .sum::<f64>()
                            .sqrt(),
                    );
                }
            }
        }
        gt_steps.sort_by(f64::total_cmp);
        let nf = data.len() as f64;
        println!(
            "  gt dyn median step {:.4}  mean pos err static {:.4} dynamic {:.4}",
            gt_steps[gt_steps.len() / 2],
            err_s / nf / n_static as f64,
            err_d / nf / (scenes[0].len() - n_static) as f64
        );
        println!(
            "{name:<7} psnr {}  static {static_mean:.5}  dynamic median {dyn_median:.5}  ratio {:.3}  ({:.0}s)",
            format_psnr(mean),
            static_mean / dyn_median,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
