//! Training, evaluation and data plumbing that ties the other modules together.

mod checkpoint;
mod config;
mod dataset;
mod eval;
mod model;
mod synth;
mod train;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::bed::BedError;
use crate::gauss::{GaussError, PlyError};
use crate::hexplane::HexPlaneError;
use crate::hnn::HnnError;
use crate::physics::PhysicsError;
use crate::render::RenderError;
use crate::stream::StreamError;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Background, FrameMode, TrainConfig};
pub use dataset::{camera_text, parse_camera, Frame, FrameDataset};
pub use eval::{
    eval, metrics_csv, render_sequence, step_displacements, trajectory_csv, FrameMetrics,
};
pub use model::{deform_graph, deform_scene, CanonicalVars, DeformOptions, Stage};
pub use synth::{
    pendulum_energy, pendulum_state, synth_scene, SceneKind, SynthConfig, SynthScene,
    PENDULUM_AMPLITUDE, PENDULUM_OMEGA,
};
pub use train::{train, LogLine, Trainer};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("primitive {index}: {message}")]
    Primitive { index: usize, message: String },
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss {
        iteration: usize,
        last_good: Box<Checkpoint>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Gauss(#[from] GaussError),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error(transparent)]
    HexPlane(#[from] HexPlaneError),
    #[error(transparent)]
    Hnn(#[from] HnnError),
    #[error(transparent)]
    Bed(#[from] BedError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Stream(#[from] StreamError),
}
