//! Toy environments, offline datasets, return-to-go bookkeeping, evaluation
//! rollouts and trajectory persistence.

mod dataset;
mod env;
mod rollout;
mod store_io;
mod trajectory;

pub use dataset::{
    generate_dataset, DatasetTier, POINT_REACH_MEDIUM_SIGMA, STITCH_MEDIUM_DRIFT,
    STITCH_MEDIUM_SIGMA, STITCH_WANDER_CEILING,
};
pub use env::{
    expert_action, mean_return, normalized_score, random_action, Env, EnvId, EnvSpec, RewardKind,
    StepOutcome, POINT_REACH_DT, POINT_REACH_GOAL, POINT_REACH_SUCCESS_RADIUS, STITCH_GOAL,
    STITCH_MIDPOINT,
};
pub use rollout::{evaluate, rollout, EpisodeResult, EvalConfig, EvalMode, EvalSummary};
pub use store_io::{
    decode_store, encode_store, export_text, import_text, load_store, save_store, STORE_FORMAT,
};
pub(crate) use store_io::{put_f64s, ByteReader};
pub use trajectory::{compute_rtg, initial_rtg, scale_return, DatasetStats, Trajectory, TrajectoryStore};

use std::path::Path;

#[derive(Debug, Clone, thiserror::Error)]
pub enum EnvDataError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unsupported format version {found:?} (expected {expected:?})")]
    Version { found: String, expected: &'static str },
    #[error("{}", match .record { Some(k) => format!("file truncated in record {k}"), None => "file truncated in header".to_string() })]
    Truncated { record: Option<usize> },
    #[error("{0} unexpected trailing bytes")]
    TrailingData(usize),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl EnvDataError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        EnvDataError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
