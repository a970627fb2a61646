//! Command-line orchestration.
//!
//! Each subcommand is a plain function returning [`CliError`]; the binary only
//! parses arguments and maps errors to exit codes.

mod bundle;
mod check;
mod commands;
mod config_file;
mod manifest;
mod plot;

use std::path::{Path, PathBuf};

pub use bundle::{PolicyBundle, ResumeState, BUNDLE_FORMAT};
pub use check::{run_checks, CheckOutcome, CheckReport, CheckScope};
pub use commands::{
    cmd_check, cmd_eval, cmd_gen_data, cmd_plot, cmd_train, load_config, parse_fault, EvalArgs,
    GenDataArgs, TrainArgs, BUNDLE_FILE, CHECKPOINT_FILE, EPOCHS_FILE, EVAL_CSV_HEADER,
    MANIFEST_FILE, UPDATES_FILE,
};
pub use config_file::{parse_config, ConfigError};
pub use manifest::{config_hash, RunManifest};
pub use plot::{moving_average, parse_table, render_svg, Table, SMOOTHING_WINDOW};

use crate::envdata::EnvDataError;
use crate::policy::PolicyError;
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {diagnostic}")]
    Config { path: PathBuf, diagnostic: ConfigError },
    #[error("{0}")]
    Format(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("aborted: {0}")]
    Abort(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    /// 0 success, 1 usage/config error, 2 check failure, 3 runtime abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 2,
            CliError::Abort(_) => 3,
            _ => 1,
        }
    }
}

impl From<EnvDataError> for CliError {
    fn from(e: EnvDataError) -> Self {
        match e {
            EnvDataError::Io { path, message } => CliError::Io {
                path: path.into(),
                message,
            },
            EnvDataError::Argument(m) => CliError::Usage(m),
            other => CliError::Format(other.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite(m) => CliError::Abort(m),
            TrainError::Io { path, message } => CliError::Io {
                path: path.into(),
                message,
            },
            TrainError::EnvData(e) => e.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}
