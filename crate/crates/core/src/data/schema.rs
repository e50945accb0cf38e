use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    #[serde(default)]
    pub modality: String,
    #[serde(default)]
    pub unit: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Zscore,
    Minmax,
    None,
}

/// How a window's label is derived from per-sample labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Labeling {
    /// Most frequent label; ties go to the lowest class id.
    #[default]
    Majority,
    LastSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    #[default]
    ByWindow,
    ByRecording,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    Jitter,
    Scale,
    Oversample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentTarget {
    #[default]
    All,
    MinorityClasses,
}

fn train_split() -> Split {
    Split::Train
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub kind: AugmentKind,
    pub magnitude: f64,
    #[serde(default)]
    pub target: AugmentTarget,
    /// Oversampling target as a fraction of the largest class (default 0.5).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    /// Only `train` is accepted; present so requests against the test split
    /// are rejected explicitly rather than silently ignored.
    #[serde(default = "train_split")]
    pub split: Split,
}

impl AugmentationSpec {
    pub fn new(kind: AugmentKind, magnitude: f64) -> Self {
        Self {
            kind,
            magnitude,
            target: AugmentTarget::All,
            ratio: None,
            split: Split::Train,
        }
    }

    pub fn oversample_ratio(&self) -> f64 {
        self.ratio.unwrap_or(0.5)
    }
}

fn default_split_ratio() -> f64 {
    0.8
}

/// Declares one dataset: its channels, labels, windowing and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct DatasetSchema {
    pub name: String,
    pub channels: Vec<ChannelSpec>,
    pub sampling_rate: f64,
    pub label_names: Vec<String>,
    pub window_length: usize,
    pub window_stride: usize,
    pub split_ratio: f64,
    #[serde(default)]
    pub split_mode: SplitMode,
    #[serde(default)]
    pub labeling: Labeling,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub augmentation: Vec<AugmentationSpec>,
}

/// On-disk form: the stride may be given directly or as a fractional overlap.
#[derive(Deserialize)]
struct RawSchema {
    name: String,
    channels: Vec<ChannelSpec>,
    sampling_rate: f64,
    label_names: Vec<String>,
    window_length: usize,
    #[serde(default)]
    window_stride: Option<usize>,
    #[serde(default)]
    window_overlap: Option<f64>,
    #[serde(default = "default_split_ratio")]
    split_ratio: f64,
    #[serde(default)]
    split_mode: SplitMode,
    #[serde(default)]
    labeling: Labeling,
    #[serde(default)]
    normalization: Normalization,
    #[serde(default)]
    augmentation: Vec<AugmentationSpec>,
}

impl TryFrom<RawSchema> for DatasetSchema {
    type Error = DataError;

    fn try_from(raw: RawSchema) -> Result<Self, DataError> {
        let window_stride = match (raw.window_stride, raw.window_overlap) {
            (Some(_), Some(_)) => {
                return Err(DataError::Schema(
                    "give either window_stride or window_overlap, not both".into(),
                ))
            }
            (Some(s), None) => s,
            (None, Some(overlap)) => stride_from_overlap(raw.window_length, overlap)?,
            (None, None) => raw.window_length,
        };
        let schema = Self {
            name: raw.name,
            channels: raw.channels,
            sampling_rate: raw.sampling_rate,
            label_names: raw.label_names,
            window_length: raw.window_length,
            window_stride,
            split_ratio: raw.split_ratio,
            split_mode: raw.split_mode,
            labeling: raw.labeling,
            normalization: raw.normalization,
            augmentation: raw.augmentation,
        };
        schema.validate()?;
        Ok(schema)
    }
}

/// `floor(W · (1 − overlap))`, so 25 samples at 50% overlap step by 12.
pub fn stride_from_overlap(window_length: usize, overlap: f64) -> Result<usize, DataError> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(DataError::Schema(format!(
            "window_overlap {overlap} outside [0, 1)"
        )));
    }
    let stride = (window_length as f64 * (1.0 - overlap)).floor() as usize;
    Ok(stride.max(1))
}

impl DatasetSchema {
    pub fn from_json(text: &str) -> Result<Self, DataError> {
        serde_json::from_str(text).map_err(|e| DataError::Schema(e.to_string()))
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn label_id(&self, name: &str) -> Option<u32> {
        self.label_names
            .iter()
            .position(|l| l == name)
            .map(|i| i as u32)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: String| Err(DataError::Schema(m));
        if self.name.trim().is_empty() {
            return fail("name must not be empty".into());
        }
        if self.channels.is_empty() {
            return fail("at least one channel is required".into());
        }
        let mut seen = HashSet::new();
        for c in &self.channels {
            if c.name == "label" {
                return fail("`label` is reserved for the label column".into());
            }
            if !seen.insert(c.name.as_str()) {
                return fail(format!("duplicate channel {:?}", c.name));
            }
        }
        if self.label_names.is_empty() {
            return fail("label_names must not be empty".into());
        }
        let mut seen = HashSet::new();
        for l in &self.label_names {
            if !seen.insert(l.as_str()) {
                return fail(format!("duplicate label {l:?}"));
            }
        }
        if self.window_length == 0 {
            return fail("window_length must be >= 1".into());
        }
        if self.window_stride == 0 || self.window_stride > self.window_length {
            return fail(format!(
                "window_stride must lie in [1, window_length={}], got {}",
                self.window_length, self.window_stride
            ));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return fail(format!("split_ratio {} outside (0, 1)", self.split_ratio));
        }
        if !(self.sampling_rate > 0.0) {
            return fail("sampling_rate must be positive".into());
        }
        for a in &self.augmentation {
            if !(a.magnitude >= 0.0) || !a.magnitude.is_finite() {
                return fail(format!("augmentation magnitude {} must be >= 0", a.magnitude));
            }
            if let Some(r) = a.ratio {
                if !(r > 0.0 && r <= 1.0) {
                    return fail(format!("oversample ratio {r} outside (0, 1]"));
                }
            }
        }
        Ok(())
    }
}
