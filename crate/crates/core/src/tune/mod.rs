//! Sequential model-based hyperparameter optimization.

mod forest;
mod smbo;
mod space;
mod study;

use std::path::PathBuf;

use thiserror::Error;

pub use forest::{Forest, ForestConfig};
pub use smbo::{expected_improvement, halton, suggest, Observation, SuggestOptions, SuggestionKind};
pub use space::{default_space, Config, DimKind, Dimension, ParamSpace, ParamValue};
pub use study::{
    apply_config, drive, export_best, incumbent, read_store, run_manual_grid, run_study,
    ExportProvenance, RunConfig, StudyOptions, StudyOutcome, TrialRecord, TrialResult, TrialStatus,
};

use crate::data::DataError;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("invalid study options: {0}")]
    Options(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(
        "trial store {path} is corrupt at line {line}: {detail}; refusing to resume (start over with --fresh)"
    )]
    CorruptStore {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("the study has no successful trials")]
    NoSuccessfulTrials,
    #[error(transparent)]
    Data(#[from] DataError),
}
