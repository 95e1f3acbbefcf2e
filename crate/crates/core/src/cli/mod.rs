//! Command implementations behind the `planret` binary.

mod commands;
mod config;
mod pipeline;

pub use commands::{
    cmd_eval, cmd_gen, cmd_index, cmd_query, cmd_train, load_cases, resolve_config, run, Cli, Command, EvalArgs,
    GenArgs, IndexArgs, QueryArgs, QueryOutput, QuerySource, TrainArgs, CHECKPOINT_FILE, COMPARISON_FILE, INDEX_FILE,
    QUERY_FILE, TRAIN_REPORT_FILE,
};
pub use config::{EvalSection, IndexSection, QuerySection, RunConfig, CONFIG_ECHO_FILE};
pub use pipeline::{build_index, of_split, prepare_all, rank_embeddings, rank_queries};

use crate::evalmetrics::EvalError;
use crate::index::IndexError;
use crate::kv::KvError;
use crate::models::ModelError;
use crate::training::TrainError;
use crate::volumes::VolumeError;

/// Error classes with their process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<KvError> for CliError {
    fn from(e: KvError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<VolumeError> for CliError {
    fn from(e: VolumeError) -> Self {
        match e {
            VolumeError::Config(_) | VolumeError::Window { .. } | VolumeError::ResampleDims { .. } => {
                CliError::Config(e.to_string())
            }
            VolumeError::Io(e) => e.into(),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Config(e.to_string()),
            ModelError::Io(e) => e.into(),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainError::Model(e) => e.into(),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Filter(_) | IndexError::ZeroK => CliError::Config(e.to_string()),
            IndexError::NonFinite(_) => CliError::Numeric(e.to_string()),
            IndexError::Io(e) => e.into(),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::K { .. } => CliError::Config(e.to_string()),
            EvalError::Io(e) => e.into(),
            e => CliError::Data(e.to_string()),
        }
    }
}
