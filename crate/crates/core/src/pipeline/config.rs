use std::fmt::Write as _;
use std::str::FromStr;

use crate::bed::BedConfig;
use crate::hexplane::HexPlaneConfig;
use crate::hnn::{DecoderConfig, FieldKind};
use crate::render::LossConfig;

use super::PipelineError;

/// How training picks frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameMode {
    /// One uniformly random frame per step (times `batch_size`).
    Random,
    /// Frames in timestamp order, cycling.
    Sequential,
    /// Every frame in every step.
    All,
    /// Random, but restricted to a window around `t = 0.5` that widens to the
    /// whole sequence over the first half of training.
    Progressive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Background {
    White,
    Black,
}

impl Background {
    pub fn rgb(self) -> [f64; 3] {
        match self {
            Background::White => [1.0; 3],
            Background::Black => [0.0; 3],
        }
    }
}

/// Every training knob. Field names double as config-file keys.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub frame_mode: FrameMode,
    pub lr_encoder: f64,
    pub lr_encoder_final: f64,
    pub lr_decoder: f64,
    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub base_resolution: usize,
    pub upsampling: Vec<usize>,
    pub time_resolution: usize,
    pub channels: usize,
    pub decoder_depth: usize,
    pub decoder_width: usize,
    pub head_hidden: usize,
    pub field: FieldKind,
    /// Boltzmann masks on; off means every primitive takes the full deformation.
    pub bed: bool,
    /// Integration step; `None` derives `1/(T−1)` from the dataset.
    pub dt: Option<f64>,
    pub phi_max: f64,
    /// `None` derives `0.1 ×` the scene diagonal.
    pub sigma_s: Option<f64>,
    pub sigma_t: f64,
    pub coupling_lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_dssim: f64,
    pub tv_weight: f64,
    pub background: Background,
    pub log_every: usize,
    /// Recorded for completeness; densification and pruning are not implemented.
    pub prune_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hex = HexPlaneConfig::default();
        let dec = DecoderConfig::default();
        let bed = BedConfig::default();
        Self {
            iterations: 20_000,
            batch_size: 1,
            frame_mode: FrameMode::Random,
            lr_encoder: 1.6e-3,
            lr_encoder_final: 1.6e-4,
            lr_decoder: 1e-3,
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            base_resolution: hex.base_resolution,
            upsampling: hex.upsampling,
            time_resolution: hex.time_resolution,
            channels: hex.channels,
            decoder_depth: dec.depth,
            decoder_width: dec.width,
            head_hidden: dec.head_hidden,
            field: dec.field,
            bed: true,
            dt: None,
            phi_max: 0.35,
            sigma_s: None,
            sigma_t: bed.sigma_t,
            coupling_lambda: bed.coupling_lambda,
            beta: bed.beta,
            gamma: bed.gamma,
            lambda_dssim: 0.2,
            tv_weight: 1.0,
            background: Background::White,
            log_every: 100,
            prune_interval: 8000,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_auto(key: &str, value: &str) -> Result<Option<f64>, PipelineError> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn auto(v: Option<f64>) -> String {
    v.map_or("auto".to_string(), |x| format!("{x:?}"))
}

impl TrainConfig {
    /// A small preset for desk-scale toy scenes.
    pub fn toy() -> Self {
        Self {
            iterations: 5000,
            frame_mode: FrameMode::Progressive,
            lr_encoder: 1.6e-2,
            lr_encoder_final: 1.6e-3,
            lr_position: 5e-4,
            lr_position_final: 5e-6,
            lr_opacity: 5e-3,
            lr_color: 2e-3,
            lr_scale: 5e-3,
            base_resolution: 32,
            upsampling: vec![2],
            time_resolution: 20,
            channels: 8,
            decoder_width: 32,
            head_hidden: 32,
            sigma_s: Some(0.02),
            sigma_t: 2.0,
            tv_weight: 0.01,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::Config(m));
        if self.iterations == 0 {
            return err("iterations must be positive".into());
        }
        if self.batch_size == 0 {
            return err("batch_size must be positive".into());
        }
        let lrs = [
            ("lr_encoder", self.lr_encoder),
            ("lr_encoder_final", self.lr_encoder_final),
            ("lr_decoder", self.lr_decoder),
            ("lr_position", self.lr_position),
            ("lr_position_final", self.lr_position_final),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
            ("lr_opacity", self.lr_opacity),
            ("lr_color", self.lr_color),
        ];
        for (k, v) in lrs {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{k} must be positive, got {v}"));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return err(format!("dt must be positive, got {dt}"));
            }
        }
        if let Some(s) = self.sigma_s {
            if !(s > 0.0) {
                return err(format!("sigma_s must be positive, got {s}"));
            }
        }
        self.hexplane().validate()?;
        self.decoder().validate()?;
        self.bed_config(1.0).validate()?;
        self.loss().validate()?;
        Ok(())
    }

    pub fn hexplane(&self) -> HexPlaneConfig {
        HexPlaneConfig {
            base_resolution: self.base_resolution,
            upsampling: self.upsampling.clone(),
            time_resolution: self.time_resolution,
            channels: self.channels,
        }
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            depth: self.decoder_depth,
            width: self.decoder_width,
            head_hidden: self.head_hidden,
            field: self.field,
        }
    }

    /// Mask parameters for a scene whose bounding box has this diagonal.
    pub fn bed_config(&self, diagonal: f64) -> BedConfig {
        BedConfig {
            sigma_s: self.sigma_s.unwrap_or(0.1 * diagonal),
            sigma_t: self.sigma_t,
            coupling_lambda: self.coupling_lambda,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda_dssim: self.lambda_dssim,
            tv_weight: self.tv_weight,
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let v = value.trim();
        match key {
            "iterations" => self.iterations = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "frame_mode" => {
                self.frame_mode = match v {
                    "random" => FrameMode::Random,
                    "sequential" => FrameMode::Sequential,
                    "all" => FrameMode::All,
                    "progressive" => FrameMode::Progressive,
                    _ => return Err(PipelineError::Config(format!("frame_mode: unknown `{v}`"))),
                }
            }
            "lr_encoder" => self.lr_encoder = parse(key, v)?,
            "lr_encoder_final" => self.lr_encoder_final = parse(key, v)?,
            "lr_decoder" => self.lr_decoder = parse(key, v)?,
            "lr_position" => self.lr_position = parse(key, v)?,
            "lr_position_final" => self.lr_position_final = parse(key, v)?,
            "lr_scale" => self.lr_scale = parse(key, v)?,
            "lr_rotation" => self.lr_rotation = parse(key, v)?,
            "lr_opacity" => self.lr_opacity = parse(key, v)?,
            "lr_color" => self.lr_color = parse(key, v)?,
            "base_resolution" => self.base_resolution = parse(key, v)?,
            "upsampling" => {
                self.upsampling = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|x| parse(key, x.trim()))
                        .collect::<Result<_, _>>()?
                }
            }
            "time_resolution" => self.time_resolution = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "decoder_depth" => self.decoder_depth = parse(key, v)?,
            "decoder_width" => self.decoder_width = parse(key, v)?,
            "head_hidden" => self.head_hidden = parse(key, v)?,
            "field" => {
                self.field = match v {
                    "hamiltonian" => FieldKind::Hamiltonian,
                    "linear" => FieldKind::Linear,
                    _ => return Err(PipelineError::Config(format!("field: unknown `{v}`"))),
                }
            }
            "bed" => self.bed = parse(key, v)?,
            "dt" => self.dt = parse_auto(key, v)?,
            "phi_max" => self.phi_max = parse(key, v)?,
            "sigma_s" => self.sigma_s = parse_auto(key, v)?,
            "sigma_t" => self.sigma_t = parse(key, v)?,
            "coupling_lambda" => self.coupling_lambda = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "lambda_dssim" => self.lambda_dssim = parse(key, v)?,
            "tv_weight" => self.tv_weight = parse(key, v)?,
            "background" => {
                self.background = match v {
                    "white" => Background::White,
                    "black" => Background::Black,
                    _ => return Err(PipelineError::Config(format!("background: unknown `{v}`"))),
                }
            }
            "log_every" => self.log_every = parse(key, v)?,
            "prune_interval" => self.prune_interval = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            _ => return Err(PipelineError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        Self::parse_onto(Self::default(), text)
    }

    pub fn parse_onto(mut cfg: Self, text: &str) -> Result<Self, PipelineError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected key = value", i + 1))
            })?;
            cfg.set(k.trim(), v)
                .map_err(|e| PipelineError::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = match self.frame_mode {
            FrameMode::Random => "random",
            FrameMode::Sequential => "sequential",
            FrameMode::All => "all",
            FrameMode::Progressive => "progressive",
        };
        let field = match self.field {
            FieldKind::Hamiltonian => "hamiltonian",
            FieldKind::Linear => "linear",
        };
        let bg = match self.background {
            Background::White => "white",
            Background::Black => "black",
        };
        let up: Vec<String> = self.upsampling.iter().map(|u| u.to_string()).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("iterations", self.iterations.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("frame_mode", mode.into()),
            ("lr_encoder", format!("{:?}", self.lr_encoder)),
            ("lr_encoder_final", format!("{:?}", self.lr_encoder_final)),
            ("lr_decoder", format!("{:?}", self.lr_decoder)),
            ("lr_position", format!("{:?}", self.lr_position)),
            ("lr_position_final", format!("{:?}", self.lr_position_final)),
            ("lr_scale", format!("{:?}", self.lr_scale)),
            ("lr_rotation", format!("{:?}", self.lr_rotation)),
            ("lr_opacity", format!("{:?}", self.lr_opacity)),
            ("lr_color", format!("{:?}", self.lr_color)),
            ("base_resolution", self.base_resolution.to_string()),
            ("upsampling", up.join(",")),
            ("time_resolution", self.time_resolution.to_string()),
            ("channels", self.channels.to_string()),
            ("decoder_depth", self.decoder_depth.to_string()),
            ("decoder_width", self.decoder_width.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("field", field.into()),
            ("bed", self.bed.to_string()),
            ("dt", auto(self.dt)),
            ("phi_max", format!("{:?}", self.phi_max)),
            ("sigma_s", auto(self.sigma_s)),
            ("sigma_t", format!("{:?}", self.sigma_t)),
            ("coupling_lambda", format!("{:?}", self.coupling_lambda)),
            ("beta", format!("{:?}", self.beta)),
            ("gamma", format!("{:?}", self.gamma)),
            ("lambda_dssim", format!("{:?}", self.lambda_dssim)),
            ("tv_weight", format!("{:?}", self.tv_weight)),
            ("background", bg.into()),
            ("log_every", self.log_every.to_string()),
            ("prune_interval", self.prune_interval.to_string()),
            ("seed", self.seed.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
