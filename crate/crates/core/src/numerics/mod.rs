//! Minimal reverse-mode differentiable array core.
//!
//! Arrays are dense, row-major `f64`. Most ops view an array as
//! `rows × last_dim`; the only broadcast is a row-wise bias ([`Tape::add_row`]).

mod array;
mod gradcheck;
mod params;
mod tape;

pub use array::DArray;
pub use gradcheck::{
    check_gradients, check_gradients_with, relative_error, GradCheckReport, REL_ERROR_FLOOR,
};
pub use params::{Binding, ParamId, ParamStore};
pub use tape::{normal_cdf, OpKind, Tape, Var};

/// Epsilon used by every layer norm in the crate.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("bad shape: {0}")]
    Shape(String),
    #[error("index out of range: {0}")]
    Range(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}
