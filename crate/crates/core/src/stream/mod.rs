//! Scale-aware mip sampling and layered level-of-detail scenes.

mod fit;
mod layered;
mod mip;

pub use fit::{train_layered, AttributeLr, LayeredTrainConfig};
pub use layered::{
    opacity_prune, rate_quality_sweep, sweep_csv, LayeredScene, PrimitiveDelta, Residual, SweepRow,
};
pub use mip::{
    beta, beta_raw, build_mipchain, downsample, mip_level, MipChain, MipLevel, MipSelectConfig,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::gauss::{GaussError, PlyError};
use crate::render::RenderError;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("scale {0:?} must be positive")]
    NonPositiveScale([f64; 3]),
    #[error("level {level} out of range 0..={max}")]
    LevelOutOfRange { level: usize, max: usize },
    #[error("residual {layer} has {offsets} offsets for {primitives} primitives")]
    ResidualMismatch {
        layer: usize,
        offsets: usize,
        primitives: usize,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("residual file: {0}")]
    MissingProperty(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error(transparent)]
    Gauss(#[from] GaussError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
