//! Config files accepted on the command line.

use std::fs;
use std::path::Path;

use automr_core::data::DatasetSchema;
use automr_core::model::{preset, QuartzConfig};
use automr_core::train::TrainConfig;
use automr_core::tune::RunConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A preset name or an explicit architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset(String),
    Config(QuartzConfig),
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::Preset("base".into())
    }
}

impl ModelSpec {
    /// Reads `--model`: a preset name, or a path to a model config file.
    pub fn from_arg(arg: &str) -> Result<Self, CliError> {
        let path = Path::new(arg);
        if path.extension().is_some_and(|e| e == "json") || path.is_file() {
            Ok(Self::Config(read_json(path)?))
        } else {
            Ok(Self::Preset(arg.to_string()))
        }
    }

    /// Concrete architecture for data with the given shape. Presets adopt the
    /// data's channels and classes; explicit configs must already match.
    pub fn resolve(&self, in_channels: usize, num_classes: usize) -> Result<QuartzConfig, CliError> {
        let config = match self {
            Self::Preset(name) => preset(name, in_channels, num_classes)?,
            Self::Config(c) => c.clone(),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Per-dataset bundle: schema plus the model and training defaults for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBundle {
    pub schema: DatasetSchema,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
}

/// A `--config` file: an exported run config or a dataset bundle.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigFile {
    Run(RunConfig),
    Bundle(DatasetBundle),
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

pub fn read_config_file(path: &Path) -> Result<ConfigFile, CliError> {
    let value: serde_json::Value = read_json(path)?;
    let invalid = |e: serde_json::Error| CliError::Invalid(format!("{}: {e}", path.display()));
    if value.get("schema").is_some() {
        serde_json::from_value(value).map(ConfigFile::Bundle).map_err(invalid)
    } else {
        let run: RunConfig = serde_json::from_value(value).map_err(invalid)?;
        run.validate()?;
        Ok(ConfigFile::Run(run))
    }
}

/// Reads `--schema`: a bare schema or a bundle's schema.
pub fn read_schema(path: &Path) -> Result<DatasetSchema, CliError> {
    let value: serde_json::Value = read_json(path)?;
    let invalid = |e: serde_json::Error| CliError::Invalid(format!("{}: {e}", path.display()));
    match value.get("schema") {
        Some(_) => serde_json::from_value::<DatasetBundle>(value)
            .map(|b| b.schema)
            .map_err(invalid),
        None => serde_json::from_value(value).map_err(invalid),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_spec_accepts_names_and_configs() {
        let spec: ModelSpec = serde_json::from_str("\"large\"").unwrap();
        assert_eq!(spec, ModelSpec::Preset("large".into()));
        let cfg = preset("base", 3, 4).unwrap();
        let spec: ModelSpec = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(spec.resolve(3, 4).unwrap(), cfg);
        assert!(ModelSpec::Preset("huge".into()).resolve(3, 4).is_err());
    }
}
