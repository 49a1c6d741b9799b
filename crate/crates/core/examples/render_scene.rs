//! Rasterizes a synthetic scene from two viewpoints, writes PPM images and
//! compares them.

use anyhow::Result;
use hamsplat::pipeline::{synth_scene, SceneKind, SynthConfig};
use hamsplat::render::{format_psnr, psnr, rasterize, ssim, RasterConfig};

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "render_out".into());
    std::fs::create_dir_all(&out)?;
    let synth = synth_scene(&SynthConfig {
        kind: SceneKind::Orbit,
        resolution: 96,
        ..Default::default()
    })?;
    let scene = synth.at(0.0);
    let raster = RasterConfig::default();
    let (a, stats) = rasterize(&scene, &synth.camera(0.0), [1.0; 3], &raster)?;
    let (b, _) = rasterize(&scene, &synth.camera(1.0), [1.0; 3], &raster)?;
    a.save_ppm(format!("{out}/view_a.ppm"))?;
    b.save_ppm(format!("{out}/view_b.ppm"))?;
    println!("{stats:?}");
    println!(
        "view a vs b: psnr {} ssim {:.4}",
        format_psnr(psnr(&a, &b)?),
        ssim(&a, &b)?
    );
    println!("view a vs itself: psnr {}", format_psnr(psnr(&a, &a)?));
    println!("images written to {out}/");
    Ok(())
}
