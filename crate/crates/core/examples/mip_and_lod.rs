//! Scale-aware mip level selection, trilinear sampling, and a layered
//! level-of-detail fit with its size/quality sweep.

use anyhow::Result;
use hamsplat::pipeline::{synth_scene, SceneKind, SynthConfig};
use hamsplat::render::{rasterize, Camera, RasterConfig};
use hamsplat::stream::{
    build_mipchain, mip_level, rate_quality_sweep, sweep_csv, train_layered, LayeredTrainConfig,
    MipSelectConfig,
};

fn main() -> Result<()> {
    let cfg = MipSelectConfig::default();
    for s in [
        [0.5, 0.5, 0.5],
        [2.0, 2.0, 2.0],
        [4.0, 1.0, 1.0],
        [4.0, 0.5, 0.5],
    ] {
        let l = mip_level(s, &cfg)?;
        println!(
            "scale {s:?}: anisotropy {:.2} beta {:.3} levels {:.3?}",
            l.anisotropy, l.beta, l.level
        );
    }

    let synth = synth_scene(&SynthConfig {
        kind: SceneKind::Mixed,
        gaussians: 120,
        ..Default::default()
    })?;
    let scene = synth.at(0.5);
    let views = [-30.0f64, 0.0, 30.0]
        .iter()
        .map(|deg| {
            let a = deg.to_radians();
            let cam = Camera::look_at(
                [4.0 * a.sin(), 0.0, -4.0 * a.cos()],
                [0.0; 3],
                [0.0, 1.0, 0.0],
                1.2,
                32,
                32,
            );
            let (img, _) = rasterize(&scene, &cam, [1.0; 3], &RasterConfig::default())?;
            Ok((cam, img))
        })
        .collect::<Result<Vec<_>>>()?;

    let chain = build_mipchain(&views[0].1);
    let dims: Vec<_> = chain.levels().iter().map(|l| (l.width, l.height)).collect();
    println!("mip chain {dims:?}");
    println!(
        "centre sample at level 1.5: {:.3?}",
        chain.sample([0.5, 0.5], 1.5)
    );

    let mut init = scene.clone();
    init.primitives = scene.primitives.iter().step_by(4).cloned().collect();
    for p in &mut init.primitives {
        p.color = [0.5; 3];
    }
    let layered = train_layered(&init, &views, &LayeredTrainConfig::default())?;
    let rows = rate_quality_sweep(&layered, &views, [1.0; 3], &RasterConfig::default())?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}
