//! Binary checkpoint; the layout is described in `docs/checkpoint.md`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, Tensor};
use crate::bed::BedConfig;
use crate::gauss::{Aabb, GaussianPrimitive, Scene};
use crate::hexplane::HexPlaneEncoder;
use crate::hnn::DeformDecoder;
use crate::physics::IntegratorConfig;

use super::{deform_scene, PipelineError, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HSPLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or render a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub iteration: usize,
    /// Number of training timestamps; fixes `dt` when the config leaves it on auto.
    pub frames: usize,
    pub scene: Scene,
    pub encoder: HexPlaneEncoder,
    pub decoder: DeformDecoder,
    /// One state per parameter tensor: the eight attribute groups, then the
    /// planes, then the decoder.
    pub optimizer: Vec<AdamState>,
}

impl Checkpoint {
    pub fn physics(&self) -> IntegratorConfig {
        let mut p = IntegratorConfig::for_frames(self.frames);
        if let Some(dt) = self.config.dt {
            p.dt = dt;
        }
        p.phi_max = self.config.phi_max;
        p
    }

    pub fn bed(&self) -> Option<BedConfig> {
        self.config
            .bed
            .then(|| self.config.bed_config(self.scene.bounds.diagonal()))
    }

    /// The trained scene at time `t`.
    pub fn deform(&self, t: f64) -> Result<Scene, PipelineError> {
        let bed = self.bed();
        let (s, _) = deform_scene(
            &self.scene,
            t,
            &self.encoder,
            &self.decoder,
            bed.as_ref(),
            &self.physics(),
        )?;
        Ok(s)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        w.bytes(self.config.to_text().as_bytes());
        w.u64(self.iteration as u64);
        w.u64(self.frames as u64);
        w.scene(&self.scene);
        w.tensors(self.encoder.planes());
        w.tensors(&self.decoder.params());
        w.u64(self.optimizer.len() as u64);
        for s in &self.optimizer {
            w.u64(s.step);
            w.f64(s.beta1);
            w.f64(s.beta2);
            w.f64(s.eps);
            w.tensor(&s.m);
            w.tensor(&s.v);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(PipelineError::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(PipelineError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let text = String::from_utf8(r.bytes()?.to_vec())
            .map_err(|_| PipelineError::Checkpoint("config is not UTF-8".into()))?;
        let config = TrainConfig::parse(&text)?;
        let iteration = r.u64()? as usize;
        let frames = r.u64()? as usize;
        let scene = r.scene()?;
        let encoder = HexPlaneEncoder::from_planes(config.hexplane(), r.tensors()?)?;
        let mut decoder = DeformDecoder::new(
            config.decoder(),
            encoder.feature_dim(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        decoder.set_params(r.tensors()?)?;
        let count = r.u64()? as usize;
        let mut optimizer = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let step = r.u64()?;
            let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
            let m = r.tensor()?;
            let v = r.tensor()?;
            optimizer.push(AdamState {
                m,
                v,
                step,
                beta1,
                beta2,
                eps,
            });
        }
        if r.pos != bytes.len() {
            return Err(PipelineError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config,
            iteration,
            frames,
            scene,
            encoder,
            decoder,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }

    fn tensor(&mut self, t: &Tensor) {
        self.u64(t.shape().len() as u64);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &x in t.data() {
            self.f64(x);
        }
    }

    fn tensors(&mut self, ts: &[Tensor]) {
        self.u64(ts.len() as u64);
        for t in ts {
            self.tensor(t);
        }
    }

    fn scene(&mut self, s: &Scene) {
        for v in s.bounds.min.iter().chain(&s.bounds.max) {
            self.f64(*v);
        }
        self.u64(s.len() as u64);
        for p in &s.primitives {
            let row =
                p.mu.iter()
                    .chain(&p.log_scale)
                    .chain(&p.rot)
                    .chain([&p.opacity_logit])
                    .chain(&p.color)
                    .chain(&p.mu_eq)
                    .chain([&p.t_eq_pos, &p.t_eq_scale]);
            for v in row {
                self.f64(*v);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| PipelineError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, PipelineError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, PipelineError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize, PipelineError> {
        let n = self.u64()? as usize;
        // Any length must fit in what is left of the file.
        if n > self.bytes.len() - self.pos {
            return Err(PipelineError::Checkpoint(format!("implausible length {n}")));
        }
        Ok(n)
    }

    fn bytes(&mut self) -> Result<&'a [u8], PipelineError> {
        let n = self.len()?;
        self.take(n)
    }

    fn tensor(&mut self) -> Result<Tensor, PipelineError> {
        let rank = self.len()?;
        let shape: Vec<usize> = (0..rank).map(|_| self.len()).collect::<Result<_, _>>()?;
        let n: usize = shape.iter().product();
        if n.saturating_mul(8) > self.bytes.len() - self.pos {
            return Err(PipelineError::Checkpoint(format!(
                "tensor {shape:?} exceeds file"
            )));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<_, _>>()?;
        Ok(Tensor::new(&shape, data)?)
    }

    fn tensors(&mut self) -> Result<Vec<Tensor>, PipelineError> {
        let n = self.len()?;
        (0..n).map(|_| self.tensor()).collect()
    }

    fn scene(&mut self) -> Result<Scene, PipelineError> {
        let mut b = [0.0; 6];
        for v in &mut b {
            *v = self.f64()?;
        }
        let n = self.len()?;
        let mut prims = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = [0.0; 19];
            for v in &mut row {
                *v = self.f64()?;
            }
            prims.push(GaussianPrimitive {
                mu: [row[0], row[1], row[2]],
                log_scale: [row[3], row[4], row[5]],
                rot: [row[6], row[7], row[8], row[9]],
                opacity_logit: row[10],
                color: [row[11], row[12], row[13]],
                mu_eq: [row[14], row[15], row[16]],
                t_eq_pos: row[17],
                t_eq_scale: row[18],
            });
        }
        Ok(Scene::new(
            prims,
            Aabb::new([b[0], b[1], b[2]], [b[3], b[4], b[5]]),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{synth_scene, SynthConfig, Trainer};

    fn small_checkpoint() -> Checkpoint {
        let synth = synth_scene(&SynthConfig {
            frames: 3,
            gaussians: 8,
            resolution: 12,
            ..Default::default()
        })
        .unwrap();
        let mut cfg = TrainConfig::toy();
        cfg.base_resolution = 4;
        cfg.time_resolution = 4;
        cfg.channels = 2;
        cfg.decoder_width = 4;
        cfg.head_hidden = 4;
        cfg.iterations = 2;
        let mut trainer =
            Trainer::new(cfg, synth.dataset().unwrap(), synth.initial_scene(0.02, 1)).unwrap();
        trainer.step().unwrap();
        trainer.checkpoint()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = small_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), ck.to_bytes());
        assert_eq!(&ck.to_bytes()[..8], b"HSPLCKPT");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = small_checkpoint().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
