//! Writes a synthetic dataset to disk and reads it back.

use anyhow::Result;
use hamsplat::pipeline::{
    pendulum_energy, pendulum_state, synth_scene, FrameDataset, SceneKind, SynthConfig,
};

fn main() -> Result<()> {
    let kind: SceneKind = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "pendulum".into())
        .parse()?;
    let out = std::env::args()
        .nth(2)
        .unwrap_or_else(|| format!("data_{}", kind.name()));
    let synth = synth_scene(&SynthConfig {
        kind,
        frames: 12,
        gaussians: 150,
        resolution: 48,
        ..Default::default()
    })?;
    synth.save(&out, 0.02)?;
    let back = FrameDataset::load(&out)?;
    println!(
        "{} frames, {} primitives, {} static",
        back.len(),
        synth.canonical.len(),
        synth.static_count()
    );
    for f in back.frames().iter().step_by(4) {
        let (theta, omega) = pendulum_state(f.t);
        println!(
            "t {:.3}  image {}x{}  pendulum angle {theta:+.4} energy {:.6}",
            f.t,
            f.image.width,
            f.image.height,
            pendulum_energy(theta, omega)
        );
    }
    println!("written to {out}/");
    Ok(())
}
