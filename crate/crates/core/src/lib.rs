pub mod autodiff;
pub mod bed;
pub mod gauss;
pub mod helmholtz;
pub mod hexplane;
pub mod hnn;
pub mod physics;
pub mod pipeline;
pub mod render;
pub mod stream;

#[cfg(test)]
mod testutil;
