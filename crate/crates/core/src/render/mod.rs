//! Differentiable splatting, image I/O, losses and metrics.

mod camera;
mod image;
mod loss;
mod raster;

pub use camera::Camera;
pub use image::ImageBuffer;
pub use loss::{
    dssim, format_psnr, l1_graph, loss_l1, psnr, ssim, ssim_graph, total_loss, LossConfig,
    SSIM_WINDOW,
};
pub use raster::{
    project, rasterize, rasterize_graph, Projected, RasterConfig, RasterStats, SplatTensors,
    SplatVars,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("image needs {expected} values, got {got}")]
    ImageSize { expected: usize, got: usize },
    #[error("channel value {0} outside [0, 1]")]
    ChannelRange(f64),
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} is smaller than the 11x11 SSIM window")]
    TooSmall(usize, usize),
    #[error("invalid loss config: {0}")]
    InvalidLoss(String),
    #[error("ppm: {0}")]
    Ppm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
