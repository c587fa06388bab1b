//! Dense tensors with reverse-mode differentiation, sized for small graph
//! predictors.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_update, AdamState};
pub use gradcheck::{
    compare_gradients, grad_check, relative_error, GradCheckReport, Mismatch, DEFAULT_STEP,
    REL_ERROR_FLOOR,
};
pub use tape::{backprop, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backprop needs a scalar output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
}

#[cfg(test)]
mod tests;
