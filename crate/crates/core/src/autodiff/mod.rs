//! Dense-tensor reverse-mode differentiation sized for small shared-MLP point
//! networks, plus Adam, a finite-difference checker and a checkpoint container.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod tape;
mod tensor;
#[cfg(test)]
mod tests;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, tape_objective, GradCheckReport, Objective};
pub use tape::{BatchStats, Gradients, Mode, Tape, Var, BN_EPS, BN_MOMENTUM};
pub use tensor::{Precision, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AutodiffError {
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("DegenerateBatch: training-mode batch norm needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),
    #[error("NonFinite: {0} produced a non-finite value")]
    NonFinite(&'static str),
}

/// Role of a named tensor in a model or optimizer state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorRole {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
    BnRunningMean,
    BnRunningVar,
    AdamFirstMoment,
    AdamSecondMoment,
}

impl TensorRole {
    pub fn code(self) -> u8 {
        match self {
            TensorRole::Weight => 0,
            TensorRole::Bias => 1,
            TensorRole::BnGamma => 2,
            TensorRole::BnBeta => 3,
            TensorRole::BnRunningMean => 4,
            TensorRole::BnRunningVar => 5,
            TensorRole::AdamFirstMoment => 6,
            TensorRole::AdamSecondMoment => 7,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => TensorRole::Weight,
            1 => TensorRole::Bias,
            2 => TensorRole::BnGamma,
            3 => TensorRole::BnBeta,
            4 => TensorRole::BnRunningMean,
            5 => TensorRole::BnRunningVar,
            6 => TensorRole::AdamFirstMoment,
            7 => TensorRole::AdamSecondMoment,
            _ => return None,
        })
    }

    /// Whether the optimizer updates tensors of this role.
    pub fn is_trainable(self) -> bool {
        matches!(
            self,
            TensorRole::Weight | TensorRole::Bias | TensorRole::BnGamma | TensorRole::BnBeta
        )
    }
}
