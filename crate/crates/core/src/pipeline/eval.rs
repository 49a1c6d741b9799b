//! Metrics tables and sequence rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::gauss::Scene;
use crate::render::{format_psnr, psnr, rasterize, ssim, Camera, ImageBuffer, RasterConfig};

use super::{Checkpoint, FrameDataset, PipelineError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameMetrics {
    pub t: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl FrameMetrics {
    pub fn between(t: f64, render: &ImageBuffer, gt: &ImageBuffer) -> Result<Self, PipelineError> {
        Ok(Self {
            t,
            psnr: psnr(render, gt)?,
            ssim: ssim(render, gt)?,
        })
    }
}

/// Renders every dataset frame from the checkpoint and scores it.
pub fn eval(ck: &Checkpoint, dataset: &FrameDataset) -> Result<Vec<FrameMetrics>, PipelineError> {
    let raster = RasterConfig::default();
    let bg = ck.config.background.rgb();
    dataset
        .frames()
        .iter()
        .map(|f| {
            let scene = ck.deform(f.t)?;
            let (img, _) = rasterize(&scene, &f.camera, bg, &raster)?;
            FrameMetrics::between(f.t, &img, &f.image)
        })
        .collect()
}

/// `frame,t,psnr,ssim` rows plus a closing `mean` row.
pub fn metrics_csv(rows: &[FrameMetrics]) -> String {
    let mut s = String::from("frame,t,psnr,ssim\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(s, "{i},{:?},{},{:.6}", r.t, format_psnr(r.psnr), r.ssim);
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let p = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let q = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        let _ = writeln!(s, "mean,,{},{q:.6}", format_psnr(p));
    }
    s
}

/// `t,id,x,y,z` for each primitive of each scene.
pub fn trajectory_csv(timestamps: &[f64], scenes: &[Scene]) -> String {
    let mut s = String::from("t,id,x,y,z\n");
    for (t, scene) in timestamps.iter().zip(scenes) {
        for (i, p) in scene.primitives.iter().enumerate() {
            let _ = writeln!(s, "{t:?},{i},{:?},{:?},{:?}", p.mu[0], p.mu[1], p.mu[2]);
        }
    }
    s
}

/// Per primitive, the distance travelled between consecutive scenes.
///
/// Row `k` holds the step from `scenes[k]` to `scenes[k + 1]`.
pub fn step_displacements(scenes: &[Scene]) -> Vec<Vec<f64>> {
    scenes
        .windows(2)
        .map(|w| {
            w[0].primitives
                .iter()
                .zip(&w[1].primitives)
                .map(|(a, b)| {
                    let d = [0, 1, 2].map(|k| b.mu[k] - a.mu[k]);
                    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
                })
                .collect()
        })
        .collect()
}

/// Writes `NNNN.ppm` per timestamp and `trajectory.csv` into `out`.
///
/// `cameras` holds one camera per timestamp, or a single camera used for all.
/// Returns the deformed scenes.
pub fn render_sequence(
    ck: &Checkpoint,
    cameras: &[Camera],
    timestamps: &[f64],
    out: impl AsRef<Path>,
) -> Result<Vec<Scene>, PipelineError> {
    if cameras.len() != timestamps.len() && cameras.len() != 1 {
        return Err(PipelineError::Config(format!(
            "{} cameras for {} timestamps",
            cameras.len(),
            timestamps.len()
        )));
    }
    let out = out.as_ref();
    fs::create_dir_all(out)?;
    let raster = RasterConfig::default();
    let bg = ck.config.background.rgb();
    let mut scenes = Vec::with_capacity(timestamps.len());
    for (i, &t) in timestamps.iter().enumerate() {
        let cam = &cameras[if cameras.len() == 1 { 0 } else { i }];
        let scene = ck.deform(t)?;
        let (img, _) = rasterize(&scene, cam, bg, &raster)?;
        img.save_ppm(out.join(format!("{i:04}.ppm")))?;
        scenes.push(scene);
    }
    fs::write(
        out.join("trajectory.csv"),
        trajectory_csv(timestamps, &scenes),
    )?;
    Ok(scenes)
}
