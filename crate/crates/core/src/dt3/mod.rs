//! Decision-TTT sequence model.
//!
//! A context of K steps is embedded as interleaved (return-to-go, state,
//! action) tokens, passed through attention + TTT blocks, and mapped to one
//! coarse action per step.

mod attention;
mod context;
mod model;
mod ttt;

pub use attention::{causal_mask, AttentionTttBlock};
pub use context::ContextWindow;
pub use model::{Dt3Config, Dt3Model, Tokens};
pub use ttt::{Projection, TttLinear, TttTrace};

use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum Dt3Error {
    #[error("timestep {timestep} outside embedding table of {table} rows")]
    TimestepOutOfRange { timestep: usize, table: usize },
    #[error("malformed context: {0}")]
    Context(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
