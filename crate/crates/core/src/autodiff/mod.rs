//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every operation is recorded on a [`Tape`]. [`Tape::grad`] walks the tape
//! backwards and records the gradient computation on the same tape, so the
//! gradients it returns can be differentiated again (reverse-over-reverse).
//! That is what lets a potential network produce a vector field `∇F(h)`
//! that later participates in a training loss.
//!
//! Batching is along the leading dimension only: most values are `[n, k]`
//! matrices with one row per primitive.
//!
//! ```
//! use hamsplat::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(&[1.0, 2.0]));
//! let f = x.mul(x).unwrap().sum().unwrap();
//! let g = tape.grad(f, &[x]).unwrap();
//! assert_eq!(g.grads[0].value().data(), &[2.0, 4.0]);
//! ```

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use tape::{concat_cols, BackwardStats, CustomOp, Gradients, Tape, Var};
#[cfg(test)]
pub(crate) use tensor::matmul_raw;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not fit {len} values")]
    BadData { shape: Vec<usize>, len: usize },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op} has no second-order backward rule")]
    NotTwiceDifferentiable { op: &'static str },
    #[error("variable belongs to a different tape")]
    ForeignVar,
    #[error("{0}")]
    InvalidArgument(String),
}

#[cfg(test)]
mod tests;
