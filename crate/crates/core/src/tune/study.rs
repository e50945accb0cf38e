use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::smbo::{suggest, Observation, SuggestOptions};
use super::space::{Config, DimKind, Dimension, ParamSpace, ParamValue};
use super::TuneError;
use crate::data::WindowedDataset;
use crate::model::{BlockConfig, ModelInstance, QuartzConfig};
use crate::train::{TrainConfig, TrainError, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
    Anomaly,
}

/// One evaluated configuration, as stored one per line in the trial store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: Config,
    /// Validation accuracy; present exactly when `status` is ok.
    pub objective: Option<f64>,
    /// Epochs trained.
    pub budget: usize,
    pub seed: u64,
    pub status: TrialStatus,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Model the trial resolved to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<QuartzConfig>,
    /// Full-length training config the trial resolved to (its `epochs` is the
    /// base run length, not `budget`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

impl TrialRecord {
    /// Objective as seen by the surrogate: failures count as 0.
    pub fn observation(&self) -> Observation {
        Observation {
            config: self.config.clone(),
            objective: self.objective.unwrap_or(0.0),
        }
    }
}

/// Result of evaluating one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub status: TrialStatus,
    pub objective: Option<f64>,
    pub budget: usize,
    pub error: Option<String>,
    pub model: Option<QuartzConfig>,
    pub train: Option<TrainConfig>,
}

impl TrialResult {
    pub fn ok(objective: f64, budget: usize) -> Self {
        Self {
            status: TrialStatus::Ok,
            objective: Some(objective),
            budget,
            error: None,
            model: None,
            train: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub n_trials: usize,
    pub epochs_per_trial: usize,
    pub seed: u64,
    pub store: PathBuf,
    /// Discard any existing store instead of resuming it.
    pub fresh: bool,
    pub validation_fraction: f64,
    pub suggest: SuggestOptions,
}

impl StudyOptions {
    pub fn new(store: &Path, n_trials: usize, epochs_per_trial: usize, seed: u64) -> Self {
        Self {
            n_trials,
            epochs_per_trial,
            seed,
            store: store.to_path_buf(),
            fresh: false,
            validation_fraction: 0.2,
            suggest: SuggestOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub best: TrialRecord,
    pub records: Vec<TrialRecord>,
}

/// Reads a trial store. A missing file is an empty history.
pub fn read_store(path: &Path, space: Option<&ParamSpace>) -> Result<Vec<TrialRecord>, TuneError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => {
            return Err(TuneError::Io {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        }
    };
    let corrupt = |line: usize, detail: String| TuneError::CorruptStore {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut records: Vec<TrialRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: TrialRecord = serde_json::from_str(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
        if r.trial != records.len() {
            return Err(corrupt(
                i + 1,
                format!("expected trial {}, found {}", records.len(), r.trial),
            ));
        }
        if r.objective.is_some() != (r.status == TrialStatus::Ok) {
            return Err(corrupt(i + 1, "objective must be present exactly for ok trials".into()));
        }
        if let Some(space) = space {
            if !space.contains(&r.config) {
                return Err(corrupt(i + 1, "config lies outside the search space".into()));
            }
        }
        records.push(r);
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(corrupt(records.len(), "last record is incomplete".into()));
    }
    Ok(records)
}

fn append_record(path: &Path, record: &TrialRecord) -> Result<(), TuneError> {
    let io = |e: std::io::Error| TuneError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut line = serde_json::to_string(record).expect("record serializes");
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    f.write_all(line.as_bytes()).map_err(io)?;
    f.sync_data().map_err(io)
}

/// Best ok trial; ties keep the earliest.
pub fn incumbent(records: &[TrialRecord]) -> Option<&TrialRecord> {
    records.iter().fold(None, |best: Option<&TrialRecord>, r| match (r.objective, best) {
        (Some(o), Some(b)) if o > b.objective.unwrap_or(f64::NEG_INFINITY) => Some(r),
        (Some(_), None) => Some(r),
        _ => best,
    })
}

/// Generic study loop over a store: `propose` picks the next config from the
/// trial index and history, `evaluate` scores it.
pub fn drive(
    space: &ParamSpace,
    opts: &StudyOptions,
    mut propose: impl FnMut(usize, &[Observation]) -> Config,
    mut evaluate: impl FnMut(usize, &Config) -> TrialResult,
) -> Result<StudyOutcome, TuneError> {
    if opts.n_trials == 0 {
        return Err(TuneError::Options("n_trials must be >= 1".into()));
    }
    if opts.fresh && opts.store.exists() {
        fs::remove_file(&opts.store).map_err(|e| TuneError::Io {
            path: opts.store.clone(),
            message: e.to_string(),
        })?;
    }
    let mut records = read_store(&opts.store, Some(space))?;
    if !records.is_empty() {
        log::info!("resuming study with {} recorded trials", records.len());
    }
    while records.len() < opts.n_trials {
        let t = records.len();
        let history: Vec<Observation> = records.iter().map(TrialRecord::observation).collect();
        let config = propose(t, &history);
        let started = Instant::now();
        let result = evaluate(t, &config);
        let record = TrialRecord {
            trial: t,
            config,
            objective: result.objective.filter(|_| result.status == TrialStatus::Ok),
            budget: result.budget,
            seed: opts.seed,
            status: result.status,
            wall_ms: started.elapsed().as_millis() as u64,
            error: result.error,
            model: result.model,
            train: result.train,
        };
        log::info!(
            "trial {t}: {:?} objective {:?}",
            record.status,
            record.objective
        );
        append_record(&opts.store, &record)?;
        records.push(record);
    }
    let best = incumbent(&records).cloned().ok_or(TuneError::NoSuccessfulTrials)?;
    Ok(StudyOutcome { best, records })
}

fn int_param(config: &Config, name: &str) -> Result<Option<i64>, TuneError> {
    match config.get(name) {
        None => Ok(None),
        Some(v) => v
            .as_i64()
            .map(Some)
            .ok_or_else(|| TuneError::Options(format!("{name} must be an integer, got {v}"))),
    }
}

fn float_param(config: &Config, name: &str) -> Result<Option<f64>, TuneError> {
    match config.get(name) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| TuneError::Options(format!("{name} must be numeric, got {v}"))),
    }
}

/// Overrides `base_model`/`base_train` with the tuned values in `config`.
pub fn apply_config(
    config: &Config,
    base_model: &QuartzConfig,
    base_train: &TrainConfig,
) -> Result<(QuartzConfig, TrainConfig), TuneError> {
    const KNOWN: [&str; 8] = [
        "learning_rate",
        "weight_decay",
        "dropout",
        "batch_size",
        "num_blocks",
        "cells_per_block",
        "base_channels",
        "kernel_base",
    ];
    if let Some(unknown) = config.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(TuneError::Options(format!("unknown hyperparameter {unknown}")));
    }
    let mut model = base_model.clone();
    let mut train = base_train.clone();
    if let Some(v) = float_param(config, "learning_rate")? {
        train.learning_rate = v;
    }
    if let Some(v) = float_param(config, "weight_decay")? {
        train.weight_decay = v;
    }
    if let Some(v) = float_param(config, "dropout")? {
        model.dropout = v;
    }
    if let Some(v) = int_param(config, "batch_size")? {
        train.batch_size = usize::try_from(v).map_err(|_| TuneError::Options(format!("batch_size {v}")))?;
    }
    let arch = ["num_blocks", "cells_per_block", "base_channels", "kernel_base"];
    if arch.iter().any(|k| config.contains_key(*k)) {
        let first = &base_model.blocks[0];
        let to_usize = |v: Option<i64>, fallback: usize, name: &str| -> Result<usize, TuneError> {
            match v {
                None => Ok(fallback),
                Some(v) if v >= 1 => Ok(v as usize),
                Some(v) => Err(TuneError::Options(format!("{name} must be >= 1, got {v}"))),
            }
        };
        let blocks = to_usize(int_param(config, "num_blocks")?, base_model.blocks.len(), "num_blocks")?;
        let cells = to_usize(int_param(config, "cells_per_block")?, first.cells, "cells_per_block")?;
        let channels = to_usize(int_param(config, "base_channels")?, first.channels, "base_channels")?;
        let kernel = to_usize(int_param(config, "kernel_base")?, first.kernel, "kernel_base")?;
        model.blocks = (0..blocks)
            .map(|i| {
                let ch = if i + 1 == blocks { 2 * channels } else { channels };
                BlockConfig::new(cells, ch, kernel + 2 * i)
            })
            .collect();
    }
    model.validate().map_err(|e| TuneError::Options(e.to_string()))?;
    train.validate().map_err(|e| TuneError::Options(e.to_string()))?;
    Ok((model, train))
}

fn train_trial(
    data: &WindowedDataset,
    config: &Config,
    base_model: &QuartzConfig,
    base_train: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> TrialResult {
    let (model_cfg, train_cfg) = match apply_config(config, base_model, base_train) {
        Ok(c) => c,
        Err(e) => {
            return TrialResult {
                status: TrialStatus::Failed,
                objective: None,
                budget: 0,
                error: Some(e.to_string()),
                model: None,
                train: None,
            }
        }
    };
    let budget_cfg = TrainConfig {
        epochs,
        seed,
        ..train_cfg.clone()
    };
    let outcome = ModelInstance::build(model_cfg.clone(), seed)
        .map_err(TrainError::from)
        .and_then(|m| Trainer::new(m, data, budget_cfg)?.run());
    let (status, objective, error) = match outcome {
        Ok(o) => match o.last.best {
            Some(b) => (TrialStatus::Ok, Some(b.accuracy), None),
            None => (TrialStatus::Ok, Some(0.0), None),
        },
        Err(e @ TrainError::Anomaly { .. }) => (TrialStatus::Anomaly, None, Some(e.to_string())),
        Err(e) => (TrialStatus::Failed, None, Some(e.to_string())),
    };
    TrialResult {
        status,
        objective,
        budget: epochs,
        error,
        model: Some(model_cfg),
        train: Some(train_cfg),
    }
}

/// SMBO study on `data`'s train split, scored on a validation carve-out.
/// Trial 0 evaluates the space defaults.
pub fn run_study(
    data: &WindowedDataset,
    space: &ParamSpace,
    base_model: &QuartzConfig,
    base_train: &TrainConfig,
    opts: &StudyOptions,
) -> Result<StudyOutcome, TuneError> {
    let tuning = data.carve_validation(opts.validation_fraction, opts.seed)?;
    drive(
        space,
        opts,
        |t, history| {
            if t == 0 {
                space.default_config()
            } else {
                suggest(history, space, opts.seed, &opts.suggest).0
            }
        },
        |_, config| {
            train_trial(&tuning, config, base_model, base_train, opts.epochs_per_trial, opts.seed)
        },
    )
}

/// Manual ablation: one trial per batch size, defaults elsewhere.
pub fn run_manual_grid(
    data: &WindowedDataset,
    batch_sizes: &[usize],
    base_model: &QuartzConfig,
    base_train: &TrainConfig,
    opts: &StudyOptions,
) -> Result<StudyOutcome, TuneError> {
    let choices = batch_sizes.iter().map(|&b| ParamValue::Int(b as i64)).collect();
    let space = ParamSpace::new(vec![Dimension::new(
        "batch_size",
        DimKind::Categorical { choices },
    )])?;
    let tuning = data.carve_validation(opts.validation_fraction, opts.seed)?;
    let opts = StudyOptions {
        n_trials: batch_sizes.len(),
        ..opts.clone()
    };
    drive(
        &space,
        &opts,
        |t, _| Config::from([("batch_size".to_string(), ParamValue::Int(batch_sizes[t] as i64))]),
        |_, config| {
            train_trial(&tuning, config, base_model, base_train, opts.epochs_per_trial, opts.seed)
        },
    )
}

/// Where an exported configuration came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportProvenance {
    pub store: PathBuf,
    pub study_seed: u64,
    pub trial: usize,
    pub objective: f64,
    pub config: Config,
}

/// A complete run description: everything `automr train` needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: QuartzConfig,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<ExportProvenance>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), TuneError> {
        self.model.validate().map_err(|e| TuneError::Options(e.to_string()))?;
        self.train.validate().map_err(|e| TuneError::Options(e.to_string()))
    }
}

/// Writes the incumbent of `store` as a [`RunConfig`].
pub fn export_best(store: &Path, out: &Path, data: Option<&Path>) -> Result<RunConfig, TuneError> {
    let records = read_store(store, None)?;
    let best = incumbent(&records).ok_or(TuneError::NoSuccessfulTrials)?;
    let (Some(model), Some(train)) = (best.model.clone(), best.train.clone()) else {
        return Err(TuneError::Options(format!(
            "trial {} has no resolved model/train config to export",
            best.trial
        )));
    };
    let run = RunConfig {
        model,
        train,
        data: data.map(Path::to_path_buf),
        provenance: Some(ExportProvenance {
            store: store.to_path_buf(),
            study_seed: best.seed,
            trial: best.trial,
            objective: best.objective.expect("incumbent is ok"),
            config: best.config.clone(),
        }),
    };
    run.validate()?;
    let json = serde_json::to_string_pretty(&run).expect("run config serializes");
    fs::write(out, json + "\n").map_err(|e| TuneError::Io {
        path: out.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(run)
}
