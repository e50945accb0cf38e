//! Sensor recordings to windowed, split, normalized datasets.

mod awd;
mod dataset;
mod ingest;
mod schema;
mod segment;
pub mod synthetic;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use awd::{from_bytes, read_awd, to_bytes, write_awd, AWD_MAGIC};
pub use dataset::{
    AugmentSummary, NormalizationRecord, Provenance, SegmentSummary, SplitSummary, WindowedDataset,
};
pub use ingest::{ingest, IngestError, IngestErrorKind, LabeledRecording};
pub use schema::{
    stride_from_overlap, AugmentKind, AugmentTarget, AugmentationSpec, ChannelSpec,
    DatasetSchema, Labeling, Normalization, Split, SplitMode,
};
pub use segment::{segment, window_offsets, Window};

use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    Schema(String),
    Io { path: PathBuf, message: String },
    Empty(String),
    Ingest(Vec<IngestError>),
    CannotSplit(String),
    AlreadyNormalized,
    AugmentTestSplit,
    Format(String),
    Tensor(TensorError),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Schema(m) => write!(f, "invalid schema: {m}"),
            Self::Io { path, message } => write!(f, "{}: {message}", path.display()),
            Self::Empty(m) => write!(f, "no data: {m}"),
            Self::Ingest(errors) => {
                write!(f, "{} ingest error(s):", errors.len())?;
                for e in errors {
                    write!(f, "\n  {e}")?;
                }
                Ok(())
            }
            Self::CannotSplit(m) => write!(f, "cannot produce both splits: {m}"),
            Self::AlreadyNormalized => write!(f, "already normalized"),
            Self::AugmentTestSplit => write!(f, "augmentation of the test split is not allowed"),
            Self::Format(m) => write!(f, "invalid dataset file: {m}"),
            Self::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<TensorError> for DataError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}

/// What [`prepare`] did, for logs and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub segmentation: SegmentSummary,
    pub split: SplitSummary,
    pub augmentation: AugmentSummary,
    pub train_class_counts: Vec<usize>,
    pub test_class_counts: Vec<usize>,
}

/// Ingest, segment, split, normalize and augment in one deterministic pass.
pub fn prepare(
    dir: &Path,
    schema: &DatasetSchema,
    seed: u64,
) -> Result<(WindowedDataset, PrepareSummary), DataError> {
    let recordings = ingest(dir, schema)?;
    prepare_recordings(schema, &recordings, seed)
}

pub fn prepare_recordings(
    schema: &DatasetSchema,
    recordings: &[LabeledRecording],
    seed: u64,
) -> Result<(WindowedDataset, PrepareSummary), DataError> {
    let (ds, segmentation) = WindowedDataset::from_recordings(schema.clone(), recordings)?;
    if ds.is_empty() {
        return Err(DataError::Empty(format!(
            "every recording is shorter than the window length {}",
            schema.window_length
        )));
    }
    let (ds, split) = ds.split(schema.split_ratio, schema.split_mode, seed)?;
    let ds = ds.normalize()?;
    let (ds, augmentation) = ds.augment(&schema.augmentation, seed)?;
    let train_class_counts = ds.class_counts(Split::Train);
    for (name, &n) in schema.label_names.iter().zip(&train_class_counts) {
        if n == 0 {
            log::warn!("class {name} has no train windows");
        }
    }
    let summary = PrepareSummary {
        segmentation,
        split,
        augmentation,
        test_class_counts: ds.class_counts(Split::Test),
        train_class_counts,
    };
    Ok((ds, summary))
}
