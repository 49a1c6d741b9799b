//! Coarse-to-fine fitting of a layered static scene.
//!
//! Level 0 is fitted at the coarsest resolution. Each further level doubles
//! the resolution, spawns primitives where the current composition is worst,
//! and trains per-primitive offsets plus the new primitives while the scene
//! below stays frozen.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamState, Tape, Tensor};
use crate::gauss::{logit, GaussianPrimitive, Scene, IDENTITY_QUAT};
use crate::render::{
    project, rasterize, rasterize_graph, total_loss, Camera, ImageBuffer, LossConfig, RasterConfig,
    SplatTensors, SSIM_WINDOW,
};

use super::{build_mipchain, LayeredScene, PrimitiveDelta, Residual, StreamError};

/// Adam learning rates per attribute group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttributeLr {
    pub mu: f64,
    pub log_scale: f64,
    pub rot: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for AttributeLr {
    fn default() -> Self {
        Self {
            mu: 2e-3,
            log_scale: 1e-2,
            rot: 5e-3,
            opacity: 5e-2,
            color: 1e-2,
        }
    }
}

impl AttributeLr {
    fn as_array(&self) -> [f64; 5] {
        [self.mu, self.log_scale, self.rot, self.opacity, self.color]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayeredTrainConfig {
    /// Number of levels including the base.
    pub layers: usize,
    pub iterations: usize,
    /// Primitives spawned per residual layer.
    pub spawn: usize,
    pub lr: AttributeLr,
    pub loss: LossConfig,
    pub raster: RasterConfig,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for LayeredTrainConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            iterations: 300,
            spawn: 32,
            lr: AttributeLr::default(),
            loss: LossConfig {
                lambda_dssim: 0.2,
                tv_weight: 0.0,
            },
            raster: RasterConfig::default(),
            background: [1.0; 3],
            seed: 0,
        }
    }
}

fn concat_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let k = a.shape()[1];
    let n = a.shape()[0] + b.shape()[0];
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(&[n, k], data).expect("row concat")
}

fn split_rows(t: &Tensor, at: usize) -> (Tensor, Tensor) {
    let k = t.shape()[1];
    let n = t.shape()[0];
    let (a, b) = t.data().split_at(at * k);
    (
        Tensor::new(&[at, k], a.to_vec()).expect("split"),
        Tensor::new(&[n - at, k], b.to_vec()).expect("split"),
    )
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

/// Reference views downsampled by `2^shift`.
fn views_at(views: &[(Camera, ImageBuffer)], shift: usize) -> Vec<(Camera, ImageBuffer)> {
    views
        .iter()
        .map(|(cam, img)| {
            let chain = build_mipchain(img);
            let level = chain.levels()[shift.min(chain.max_level())].clone();
            (cam.resized(level.width, level.height), level)
        })
        .collect()
}

/// Trains `offsets` for the frozen rows and all of `fresh`.
#[allow(clippy::too_many_arguments)]
fn fit_level(
    frozen: &SplatTensors,
    offsets: &mut [Tensor; 5],
    fresh: &mut SplatTensors,
    views: &[(Camera, ImageBuffer)],
    cfg: &LayeredTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(), StreamError> {
    let k = frozen.len();
    let (w, h) = (views[0].1.width, views[0].1.height);
    let loss_cfg = if w < SSIM_WINDOW || h < SSIM_WINDOW {
        LossConfig {
            lambda_dssim: 0.0,
            ..cfg.loss
        }
    } else {
        cfg.loss
    };
    let mut off_state: Vec<AdamState> = offsets.iter().map(|t| AdamState::new(t.shape())).collect();
    let mut new_state: Vec<AdamState> = fresh
        .as_array()
        .iter()
        .map(|t| AdamState::new(t.shape()))
        .collect();
    let targets: Vec<Tensor> = views.iter().map(|(_, img)| img.to_tensor()).collect();
    let lrs = cfg.lr.as_array();
    for _ in 0..cfg.iterations {
        let v = rng.gen_range(0..views.len());
        let cam = &views[v].0;
        let full: Vec<Tensor> = frozen
            .as_array()
            .iter()
            .zip(offsets.iter())
            .zip(fresh.as_array())
            .map(|((f, o), n)| concat_rows(&add(f, o), n))
            .collect();
        let full = SplatTensors::from_array(full.try_into().expect("five attributes"));
        let tape = Tape::new();
        let vars = full.to_vars(&tape, true);
        let (img, _) = rasterize_graph(vars, cam, cfg.background, &cfg.raster)?;
        let loss = total_loss(img, &targets[v], cam.width, cam.height, None, &loss_cfg)?;
        let grads = tape.grad(loss, &vars.as_array())?.values();
        let mut fresh_next = Vec::with_capacity(5);
        for (a, g) in grads.iter().enumerate() {
            let (g_top, g_new) = split_rows(g, k);
            offsets[a] = adam_step(&offsets[a], &g_top, &mut off_state[a], lrs[a])?;
            fresh_next.push(adam_step(
                fresh.as_array()[a],
                &g_new,
                &mut new_state[a],
                lrs[a],
            )?);
        }
        *fresh = SplatTensors::from_array(fresh_next.try_into().expect("five attributes"));
    }
    Ok(())
}

/// New primitives at the worst-rendered pixels, placed at the depth of the
/// nearest projected primitive.
fn spawn(
    scene: &Scene,
    views: &[(Camera, ImageBuffer)],
    count: usize,
    cfg: &LayeredTrainConfig,
) -> Result<Vec<GaussianPrimitive>, StreamError> {
    let mut candidates = Vec::new();
    for (vi, (cam, gt)) in views.iter().enumerate() {
        let (img, _) = rasterize(scene, cam, cfg.background, &cfg.raster)?;
        for y in 0..cam.height {
            for x in 0..cam.width {
                let (a, b) = (img.pixel(x, y), gt.pixel(x, y));
                let err: f64 = (0..3).map(|c| (a[c] - b[c]).abs()).sum();
                candidates.push((err, vi, x, y));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::with_capacity(count);
    for &(_, vi, x, y) in candidates.iter().take(count) {
        let (cam, gt) = &views[vi];
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let depth = scene
            .primitives
            .iter()
            .filter_map(|p| project(p, cam, &cfg.raster))
            .map(|pr| {
                (
                    (pr.mean[0] - px).powi(2) + (pr.mean[1] - py).powi(2),
                    pr.depth,
                )
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, d)| d)
            .unwrap_or_else(|| {
                let c = cam.position();
                (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
            });
        let local = [
            (px - cam.cx) / cam.fx * depth,
            (py - cam.cy) / cam.fy * depth,
            depth,
        ];
        let (r, t) = (cam.rotation(), cam.translation());
        let mu = [0, 1, 2].map(|j| (0..3).map(|i| r[i][j] * (local[i] - t[i])).sum::<f64>());
        let scale = 0.7 * depth / cam.fx;
        let mut p = GaussianPrimitive::new(mu, [scale; 3], IDENTITY_QUAT, 0.5, gt.pixel(x, y))?;
        p.opacity_logit = logit(0.2);
        out.push(p);
    }
    Ok(out)
}

/// Fits `init` to the views coarse-to-fine, one layer per resolution.
pub fn train_layered(
    init: &Scene,
    views: &[(Camera, ImageBuffer)],
    cfg: &LayeredTrainConfig,
) -> Result<LayeredScene, StreamError> {
    if views.is_empty() {
        return Err(StreamError::InvalidConfig("no reference views".into()));
    }
    if cfg.layers == 0 {
        return Err(StreamError::InvalidConfig(
            "layers must be at least 1".into(),
        ));
    }
    cfg.loss.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.shuffle(&mut rng);

    let coarse = views_at(views, cfg.layers - 1);
    let empty = SplatTensors::from_primitives(&[]);
    let mut no_offsets = empty.as_array().map(|t| t.clone());
    let mut fresh = SplatTensors::from_primitives(&init.primitives);
    fit_level(&empty, &mut no_offsets, &mut fresh, &coarse, cfg, &mut rng)?;
    let mut base = init.clone();
    fresh.write_to(&mut base.primitives);
    let mut layered = LayeredScene::new(base);

    for level in 1..cfg.layers {
        let views_l = views_at(views, cfg.layers - 1 - level);
        let current = layered.compose(level - 1)?;
        let mut appended = spawn(&current, &views_l, cfg.spawn, cfg)?;
        let frozen = SplatTensors::from_primitives(&current.primitives);
        let mut offsets = frozen.as_array().map(|t| Tensor::zeros(t.shape()));
        let mut fresh = SplatTensors::from_primitives(&appended);
        fit_level(&frozen, &mut offsets, &mut fresh, &views_l, cfg, &mut rng)?;
        fresh.write_to(&mut appended);
        let row = |t: &Tensor, i: usize, k: usize| t.data()[i * k..(i + 1) * k].to_vec();
        let deltas = (0..current.len())
            .map(|i| {
                let mut d = PrimitiveDelta::default();
                d.mu.copy_from_slice(&row(&offsets[0], i, 3));
                d.log_scale.copy_from_slice(&row(&offsets[1], i, 3));
                d.rot.copy_from_slice(&row(&offsets[2], i, 4));
                d.opacity_logit = offsets[3].data()[i];
                d.color.copy_from_slice(&row(&offsets[4], i, 3));
                d
            })
            .collect();
        layered.push(
            Residual {
                offsets: deltas,
                appended,
            },
            0.0,
        );
    }
    Ok(layered)
}
