//! The optimisation loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamState, AutodiffError, Tape, Tensor, Var};
use crate::bed::BedConfig;
use crate::gauss::{quat_normalize, Scene};
use crate::hexplane::HexPlaneEncoder;
use crate::hnn::DeformDecoder;
use crate::physics::IntegratorConfig;
use crate::render::{psnr, rasterize_graph, total_loss, ImageBuffer, RasterConfig, SplatTensors};

use super::model::{deform_graph, CanonicalVars, DeformOptions};
use super::{Checkpoint, FrameDataset, FrameMode, PipelineError, TrainConfig};

/// Number of per-primitive attribute groups that lead the optimizer list.
const ATTRIBUTE_GROUPS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLine {
    pub iteration: usize,
    pub loss: f64,
    pub psnr: f64,
}

/// Owns the training state; one [`Trainer::step`] is one optimizer update.
pub struct Trainer {
    state: Checkpoint,
    dataset: FrameDataset,
    bed: Option<BedConfig>,
    physics: IntegratorConfig,
    raster: RasterConfig,
}

/// `a·(b/a)^f`, the exponential interpolation between two rates.
fn decayed(a: f64, b: f64, f: f64) -> f64 {
    a * (b / a).powf(f.clamp(0.0, 1.0))
}

impl Trainer {
    /// Fresh encoder and decoder around `init`, seeded from the config.
    pub fn new(
        config: TrainConfig,
        dataset: FrameDataset,
        init: Scene,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(PipelineError::Dataset("no frames".into()));
        }
        if init.is_empty() {
            return Err(PipelineError::Config(
                "initial scene has no primitives".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = HexPlaneEncoder::new(config.hexplane(), &mut rng)?;
        let decoder = DeformDecoder::new(config.decoder(), encoder.feature_dim(), &mut rng)?;
        let mut optimizer: Vec<AdamState> = SplatTensors::from_primitives(&init.primitives)
            .as_array()
            .iter()
            .map(|t| AdamState::new(t.shape()))
            .collect();
        let n = init.len();
        optimizer.extend([
            AdamState::new(&[n, 3]),
            AdamState::new(&[n, 1]),
            AdamState::new(&[n, 1]),
        ]);
        optimizer.extend(encoder.planes().iter().map(|p| AdamState::new(p.shape())));
        optimizer.extend(decoder.params().iter().map(|p| AdamState::new(p.shape())));
        let state = Checkpoint {
            frames: dataset.len(),
            config,
            iteration: 0,
            scene: init,
            encoder,
            decoder,
            optimizer,
        };
        Self::resume(state, dataset)
    }

    /// Continues from a saved state.
    pub fn resume(state: Checkpoint, dataset: FrameDataset) -> Result<Self, PipelineError> {
        if dataset.is_empty() {
            return Err(PipelineError::Dataset("no frames".into()));
        }
        let physics = state.physics();
        physics.validate()?;
        let bed = state.bed();
        if let Some(b) = &bed {
            b.validate()?;
        }
        Ok(Self {
            state,
            dataset,
            bed,
            physics,
            raster: RasterConfig::default(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.state.clone()
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.state
    }

    fn frames_for(&self, iteration: usize) -> Vec<usize> {
        let cfg = &self.state.config;
        let n = self.dataset.len();
        match cfg.frame_mode {
            FrameMode::All => (0..n).collect(),
            FrameMode::Sequential => (0..cfg.batch_size)
                .map(|k| (iteration * cfg.batch_size + k) % n)
                .collect(),
            FrameMode::Random | FrameMode::Progressive => {
                let pool: Vec<usize> = if cfg.frame_mode == FrameMode::Progressive {
                    let grown = (iteration + 1) as f64 / (0.5 * cfg.iterations as f64);
                    let half = 0.5 * grown.min(1.0);
                    let frames = self.dataset.frames();
                    let near: Vec<usize> = (0..n)
                        .filter(|&k| (frames[k].t - 0.5).abs() <= half)
                        .collect();
                    if near.is_empty() {
                        // Nearest frame to the middle.
                        let k = (0..n)
                            .min_by(|&a, &b| {
                                (frames[a].t - 0.5)
                                    .abs()
                                    .total_cmp(&(frames[b].t - 0.5).abs())
                            })
                            .expect("non-empty dataset");
                        vec![k]
                    } else {
                        near
                    }
                } else {
                    (0..n).collect()
                };
                // Derived from (seed, iteration) so a resumed run picks the same frames.
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(iteration as u64 + 1);
                (0..cfg.batch_size)
                    .map(|_| pool[rng.gen_range(0..pool.len())])
                    .collect()
            }
        }
    }

    /// One update. Returns the loss and PSNR measured before the update.
    pub fn step(&mut self) -> Result<LogLine, PipelineError> {
        let iteration = self.state.iteration;
        let cfg = self.state.config.clone();
        let frames = self.frames_for(iteration);
        let tape = Tape::new();
        let canon = CanonicalVars::from_scene(&tape, &self.state.scene, true);
        let planes: Vec<Var> = self
            .state
            .encoder
            .planes()
            .iter()
            .map(|p| tape.leaf(p.clone()))
            .collect();
        let decoder = self.state.decoder.bind(&tape, true);
        let opts = DeformOptions {
            bed: self.bed.as_ref(),
            physics: &self.physics,
            bounds: &self.state.scene.bounds,
        };
        let tv = if cfg.tv_weight > 0.0 {
            Some(self.state.encoder.tv_loss_graph(&planes)?)
        } else {
            None
        };
        let loss_cfg = cfg.loss();
        let forward = || -> Result<(Var, f64), PipelineError> {
            let mut total: Option<Var> = None;
            let mut psnr_sum = 0.0;
            let mut trace = Vec::new();
            for &fi in &frames {
                let frame = &self.dataset.frames()[fi];
                let splat = deform_graph(
                    &canon,
                    &self.state.encoder,
                    &planes,
                    &decoder,
                    frame.t,
                    &opts,
                    &mut trace,
                )?;
                let (w, h) = (frame.camera.width, frame.camera.height);
                let (img, _) =
                    rasterize_graph(splat, &frame.camera, cfg.background.rgb(), &self.raster)?;
                let loss = total_loss(img, &frame.image.to_tensor(), w, h, tv, &loss_cfg)?;
                psnr_sum += psnr(&ImageBuffer::from_tensor(w, h, &img.value())?, &frame.image)?;
                total = Some(match total {
                    None => loss,
                    Some(t) => t.add(loss)?,
                });
            }
            let count = frames.len() as f64;
            let loss = total.expect("at least one frame").scale(1.0 / count)?;
            Ok((loss, psnr_sum / count))
        };
        let abort = || PipelineError::NonFiniteLoss {
            iteration,
            last_good: Box::new(self.state.clone()),
        };
        let (loss, mean_psnr) = match forward() {
            Err(PipelineError::Autodiff(AutodiffError::NonFinite { .. })) => return Err(abort()),
            r => r?,
        };
        let loss_value = loss.item()?;
        if !loss_value.is_finite() {
            return Err(abort());
        }

        let mut wrt: Vec<Var> = canon.as_array().to_vec();
        wrt.extend_from_slice(&planes);
        wrt.extend_from_slice(decoder.vars());
        let grads = match tape.grad(loss, &wrt) {
            Err(AutodiffError::NonFinite { .. }) => return Err(abort()),
            r => r?.values(),
        };
        if grads
            .iter()
            .any(|g| g.data().iter().any(|x| !x.is_finite()))
        {
            return Err(abort());
        }

        let f = iteration as f64 / cfg.iterations as f64;
        let lr_pos = decayed(cfg.lr_position, cfg.lr_position_final, f);
        let lr_enc = decayed(cfg.lr_encoder, cfg.lr_encoder_final, f);
        let attr_lr = [
            lr_pos,
            cfg.lr_scale,
            cfg.lr_rotation,
            cfg.lr_opacity,
            cfg.lr_color,
            lr_pos,
            lr_pos,
            lr_pos,
        ];
        let n_planes = planes.len();
        let values: Vec<Tensor> = wrt.iter().map(|v| v.value()).collect();
        drop(decoder);
        let mut updated = Vec::with_capacity(values.len());
        for (k, ((p, g), s)) in values
            .iter()
            .zip(&grads)
            .zip(self.state.optimizer.iter_mut())
            .enumerate()
        {
            let lr = if k < ATTRIBUTE_GROUPS {
                attr_lr[k]
            } else if k < ATTRIBUTE_GROUPS + n_planes {
                lr_enc
            } else {
                cfg.lr_decoder
            };
            updated.push(adam_step(p, g, s, lr)?);
        }
        let mut it = updated.into_iter();
        let splat: [Tensor; 5] = std::array::from_fn(|_| it.next().expect("counted"));
        let [mu_eq, t_pos, t_scale]: [Tensor; 3] =
            std::array::from_fn(|_| it.next().expect("counted"));
        let prims = &mut self.state.scene.primitives;
        SplatTensors::from_array(splat).write_to(prims);
        for (i, p) in prims.iter_mut().enumerate() {
            p.mu_eq.copy_from_slice(&mu_eq.data()[3 * i..3 * i + 3]);
            p.t_eq_pos = t_pos.data()[i];
            p.t_eq_scale = t_scale.data()[i];
            p.rot = quat_normalize(p.rot)?;
        }
        for plane in self.state.encoder.planes_mut() {
            *plane = it.next().expect("counted");
        }
        self.state.decoder.set_params(it.collect())?;
        self.state.iteration += 1;
        Ok(LogLine {
            iteration,
            loss: loss_value,
            psnr: mean_psnr,
        })
    }

    /// Runs until the configured iteration count, calling `log` every
    /// `log_every` steps and on the last one.
    pub fn run(&mut self, mut log: impl FnMut(&LogLine)) -> Result<(), PipelineError> {
        let total = self.state.config.iterations;
        let every = self.state.config.log_every.max(1);
        while self.state.iteration < total {
            let line = self.step()?;
            if line.iteration % every == 0 || line.iteration + 1 == total {
                log(&line);
            }
        }
        Ok(())
    }
}

/// Trains from `init` for `cfg.iterations` steps, logging to stderr.
pub fn train(
    cfg: TrainConfig,
    dataset: FrameDataset,
    init: Scene,
) -> Result<Checkpoint, PipelineError> {
    let mut trainer = Trainer::new(cfg, dataset, init)?;
    trainer.run(|l| {
        eprintln!(
            "iter {:>6}  loss {:.6}  psnr {}",
            l.iteration,
            l.loss,
            crate::render::format_psnr(l.psnr)
        )
    })?;
    Ok(trainer.into_checkpoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{synth_scene, SceneKind, SynthConfig};

    fn tiny_config() -> TrainConfig {
        let mut cfg = TrainConfig::toy();
        cfg.base_resolution = 6;
        cfg.time_resolution = 4;
        cfg.channels = 4;
        cfg.decoder_width = 8;
        cfg.head_hidden = 8;
        cfg.iterations = 20;
        cfg
    }

    fn data() -> (FrameDataset, Scene) {
        let s = synth_scene(&SynthConfig {
            kind: SceneKind::Pendulum,
            frames: 4,
            gaussians: 16,
            resolution: 16,
            ..Default::default()
        })
        .unwrap();
        (s.dataset().unwrap(), s.initial_scene(0.02, 3))
    }

    #[test]
    fn zero_steps_is_initialization() {
        let (ds, init) = data();
        let a = Trainer::new(tiny_config(), ds.clone(), init.clone()).unwrap();
        let ck = a.checkpoint();
        assert_eq!(ck.iteration, 0);
        assert_eq!(ck.scene, init);
        let b = Trainer::new(tiny_config(), ds, init).unwrap();
        assert_eq!(b.checkpoint().to_bytes(), ck.to_bytes());
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let (ds, init) = data();
        let mut cfg = tiny_config();
        cfg.iterations = 6;
        let a = train(cfg.clone(), ds.clone(), init.clone()).unwrap();
        let b = train(cfg.clone(), ds.clone(), init.clone()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());

        let mut t = Trainer::new(cfg, ds.clone(), init).unwrap();
        for _ in 0..3 {
            t.step().unwrap();
        }
        let mid = Checkpoint::from_bytes(&t.checkpoint().to_bytes()).unwrap();
        let mut r = Trainer::resume(mid, ds).unwrap();
        r.run(|_| {}).unwrap();
        assert_eq!(r.checkpoint().to_bytes(), a.to_bytes());
    }

    #[test]
    fn loss_goes_down() {
        let (ds, init) = data();
        let mut cfg = tiny_config();
        cfg.iterations = 60;
        cfg.frame_mode = FrameMode::All;
        let mut t = Trainer::new(cfg, ds, init).unwrap();
        let losses: Vec<f64> = (0..60).map(|_| t.step().unwrap().loss).collect();
        let head: f64 = losses[..10].iter().sum();
        let tail: f64 = losses[50..].iter().sum();
        assert!(tail < head, "{head} -> {tail}");
        assert_eq!(t.iteration(), 60);
    }

    #[test]
    fn non_finite_loss_aborts_with_last_good_state() {
        let (ds, mut init) = data();
        let mut t = Trainer::new(tiny_config(), ds.clone(), init.clone()).unwrap();
        t.step().unwrap();
        let good = t.checkpoint();
        let mut state = good.clone();
        state.scene.primitives[0].color[0] = f64::NAN;
        let mut bad = Trainer::resume(state, ds.clone()).unwrap();
        match bad.step() {
            Err(PipelineError::NonFiniteLoss {
                iteration,
                last_good,
            }) => {
                assert_eq!(iteration, 1);
                assert_eq!(last_good.iteration, 1);
                assert!(last_good.scene.primitives[0].color[0].is_nan());
            }
            other => panic!("expected abort, got {other:?}"),
        }
        init.primitives.clear();
        assert!(Trainer::new(tiny_config(), ds, init).is_err());
    }
}
