//! Dense feed-forward networks in double precision.
//!
//! Batches are row-major: one sample per row. Layer weights have shape
//! `(fan_out, fan_in)`, so a layer computes `Z = X Wᵀ + b`. Hidden layers use
//! the rectifier and the output layer is the identity (logits).

mod gradcheck;
mod loss;
mod mlp;

pub use gradcheck::numeric_grad_oracle;
pub use loss::{
    aux_loss, aux_loss_masked, bce_with_logits, masked_softmax_cross_entropy, softmax_rows,
    softmax_cross_entropy, AuxLossKind,
};
pub use mlp::{Dense, ForwardTrace, Gradients, Mlp};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("label {label} is not among the active classes")]
    InactiveLabel { label: usize },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("invalid layer dimensions {0:?}")]
    Dims(Vec<usize>),
    #[error("learning rate must be non-negative, got {0}")]
    LearningRate(f64),
}

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl std::fmt::Debug,
    found: impl std::fmt::Debug,
) -> NnError {
    NnError::Shape {
        context,
        expected: format!("{expected:?}"),
        found: format!("{found:?}"),
    }
}
