//! Mini-batch training with AdamW, gradient clipping, anomaly recovery,
//! learning-rate scheduling, checkpointing and metric tracking.

mod checkpoint;
mod config;
mod events;
mod metrics;
mod optim;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{Scheduler, SchedulerState, TrainConfig};
pub use events::{read_events, EventRecord, EventSink};
pub use metrics::{argmax, ClassMetrics, MetricsReport};
pub use optim::{clip_global_norm, global_norm, AdamW, StepSize};

use crate::data::{DataError, Split, WindowedDataset};
use crate::model::{ForwardCtx, ModelError, ModelInstance};
use crate::seed::derive_seed;
use crate::tape::{Graph, Tape};
use crate::tensor::{softmax_cross_entropy, Tensor, TensorError};

pub const BEST_CHECKPOINT: &str = "best.amck";
pub const LAST_CHECKPOINT: &str = "last.amck";
pub const EVENT_LOG: &str = "events.ndjson";

const EVAL_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("the {0:?} split is empty")]
    EmptySplit(Split),
    #[error("model expects {model} {what} but the dataset has {data}")]
    Incompatible {
        what: &'static str,
        model: usize,
        data: usize,
    },
    #[error(
        "training diverged twice in epoch {epoch} (last at step {step}, lr {lr:e}): {detail}"
    )]
    Anomaly {
        epoch: usize,
        step: u64,
        lr: f64,
        detail: String,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Best test accuracy seen and the 1-based epoch that reached it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub accuracy: f64,
    pub epoch: usize,
}

/// Everything needed to continue training exactly where it stopped.
///
/// Shuffling and dropout streams are derived from `seed`, the epoch and the
/// global step, so no separate generator state is kept.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: ModelInstance<f32>,
    pub optimizer: AdamW,
    pub scheduler: SchedulerState,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub best: Option<BestRecord>,
    /// Multiplier applied after anomaly recoveries.
    pub lr_scale: f64,
    pub seed: u64,
    /// Test metrics of the last completed epoch.
    pub metrics: Option<MetricsReport>,
}

impl TrainState {
    pub fn new(model: ModelInstance<f32>, seed: u64) -> Self {
        let optimizer = AdamW::new(model.params().iter().map(|p| p.value.shape()));
        Self {
            model,
            optimizer,
            scheduler: SchedulerState::default(),
            epoch: 0,
            step: 0,
            best: None,
            lr_scale: 1.0,
            seed,
            metrics: None,
        }
    }
}

/// Metrics for one completed epoch. Train metrics come from the train-mode
/// forward passes of that epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train: MetricsReport,
    pub test: MetricsReport,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: TrainState,
    pub last: TrainState,
    pub history: Vec<EpochLog>,
    pub stopped_early: bool,
}

enum EpochError {
    Anomaly { step: u64, detail: String },
    Fatal(TrainError),
}

impl<E: Into<TrainError>> From<E> for EpochError {
    fn from(e: E) -> Self {
        Self::Fatal(e.into())
    }
}

pub struct Trainer<'a> {
    config: TrainConfig,
    data: &'a WindowedDataset,
    train_indices: Vec<usize>,
    state: TrainState,
    best_state: Option<TrainState>,
    history: Vec<EpochLog>,
    events: Option<EventSink>,
    checkpoint_dir: Option<PathBuf>,
    stopped_early: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: ModelInstance<f32>,
        data: &'a WindowedDataset,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        let state = TrainState::new(model, config.seed);
        Self::resume(state, data, config)
    }

    /// Continues from a saved state.
    pub fn resume(
        state: TrainState,
        data: &'a WindowedDataset,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let model_cfg = state.model.config();
        if model_cfg.in_channels != data.num_channels() {
            return Err(TrainError::Incompatible {
                what: "input channels",
                model: model_cfg.in_channels,
                data: data.num_channels(),
            });
        }
        if model_cfg.num_classes != data.num_classes() {
            return Err(TrainError::Incompatible {
                what: "classes",
                model: model_cfg.num_classes,
                data: data.num_classes(),
            });
        }
        let train_indices = data.indices(Split::Train);
        if train_indices.is_empty() {
            return Err(TrainError::EmptySplit(Split::Train));
        }
        if data.indices(Split::Test).is_empty() {
            return Err(TrainError::EmptySplit(Split::Test));
        }
        for (class, &n) in data.class_counts(Split::Train).iter().enumerate() {
            if n == 0 {
                log::warn!("class {} has no train windows", data.schema().label_names[class]);
            }
        }
        Ok(Self {
            config,
            data,
            train_indices,
            best_state: None,
            state,
            history: Vec::new(),
            events: None,
            checkpoint_dir: None,
            stopped_early: false,
        })
    }

    /// Appends per-epoch records to `path`.
    pub fn with_event_log(mut self, path: &Path) -> Self {
        self.events = Some(EventSink::open(path));
        self
    }

    /// Writes `best.amck` on improvement and `last.amck` after every epoch.
    pub fn with_checkpoint_dir(mut self, dir: &Path) -> Self {
        self.checkpoint_dir = Some(dir.to_path_buf());
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn history(&self) -> &[EpochLog] {
        &self.history
    }

    /// Learning rate used for 0-based `epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.config.learning_rate
            * self
                .state
                .scheduler
                .factor(self.config.scheduler, epoch, self.config.epochs)
            * self.state.lr_scale
    }

    /// Trains until `stop_epoch` epochs have completed (capped by the config),
    /// or early stopping triggers.
    pub fn run_until(&mut self, stop_epoch: usize) -> Result<(), TrainError> {
        let stop = stop_epoch.min(self.config.epochs);
        while self.state.epoch < stop && !self.stopped_early {
            self.run_epoch()?;
            if let (Some(patience), Some(best)) = (self.config.early_stop_patience, self.state.best) {
                if self.state.epoch - best.epoch >= patience {
                    log::info!(
                        "early stop after epoch {}: no improvement since epoch {}",
                        self.state.epoch,
                        best.epoch
                    );
                    self.stopped_early = true;
                }
            }
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<TrainOutcome, TrainError> {
        self.run_until(self.config.epochs)?;
        Ok(self.finish())
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            best: self.best_state.unwrap_or_else(|| self.state.clone()),
            last: self.state,
            history: self.history,
            stopped_early: self.stopped_early,
        }
    }

    fn run_epoch(&mut self) -> Result<(), TrainError> {
        let started = Instant::now();
        let snapshot = self.state.clone();
        let (train, lr) = match self.train_epoch() {
            Ok(r) => r,
            Err(EpochError::Fatal(e)) => return Err(e),
            Err(EpochError::Anomaly { step, detail }) => {
                log::warn!(
                    "anomaly in epoch {} at step {step}: {detail}; restoring and halving the learning rate",
                    snapshot.epoch + 1
                );
                self.state = snapshot;
                self.state.lr_scale *= 0.5;
                match self.train_epoch() {
                    Ok(r) => r,
                    Err(EpochError::Fatal(e)) => return Err(e),
                    Err(EpochError::Anomaly { step, detail }) => {
                        return Err(TrainError::Anomaly {
                            epoch: self.state.epoch + 1,
                            step,
                            lr: self.learning_rate(self.state.epoch),
                            detail,
                        })
                    }
                }
            }
        };
        let test = evaluate(&self.state.model, self.data, Split::Test)?;
        self.state.scheduler.observe(self.config.scheduler, train.loss);
        self.state.epoch += 1;
        self.state.metrics = Some(test.clone());
        let epoch = self.state.epoch;
        let improved = self.state.best.is_none_or(|b| test.accuracy > b.accuracy);
        if improved {
            self.state.best = Some(BestRecord {
                accuracy: test.accuracy,
                epoch,
            });
            self.best_state = Some(self.state.clone());
        }
        if let Some(dir) = &self.checkpoint_dir {
            if improved {
                save_checkpoint(&self.config, &self.state, &dir.join(BEST_CHECKPOINT))?;
            }
            save_checkpoint(&self.config, &self.state, &dir.join(LAST_CHECKPOINT))?;
        }
        let wall_ms = started.elapsed().as_millis() as u64;
        if let Some(sink) = &mut self.events {
            for (split, m) in [(Split::Train, &train), (Split::Test, &test)] {
                sink.emit(&EventRecord {
                    epoch,
                    split,
                    loss: m.loss,
                    accuracy: m.accuracy,
                    macro_f1: m.macro_f1,
                    lr,
                    wall_ms,
                });
            }
        }
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4} | test loss {:.4} acc {:.4} | lr {lr:.2e}",
            train.loss,
            train.accuracy,
            test.loss,
            test.accuracy
        );
        self.history.push(EpochLog {
            epoch,
            lr,
            train,
            test,
            wall_ms,
        });
        Ok(())
    }

    fn train_epoch(&mut self) -> Result<(MetricsReport, f64), EpochError> {
        let epoch = self.state.epoch;
        let lr = self.learning_rate(epoch);
        let size = StepSize {
            lr,
            weight_decay: self.config.weight_decay,
        };
        let mut order = self.train_indices.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            self.state.seed,
            epoch as u64,
        )));
        let classes = self.data.num_classes();
        let mut loss_sum = 0.0;
        let mut predicted = Vec::with_capacity(order.len());
        let mut actual = Vec::with_capacity(order.len());
        for chunk in order.chunks(self.config.batch_size) {
            let (x, y) = self.data.batch(chunk);
            let state = &mut self.state;
            let mut tape = Tape::new();
            let ctx = ForwardCtx::train(state.seed, state.step);
            let logits = state.model.forward(&mut tape, x, ctx)?;
            let ce = softmax_cross_entropy(tape.value(&logits), &y)?;
            if !ce.loss.is_finite() {
                return Err(EpochError::Anomaly {
                    step: state.step,
                    detail: format!("loss is {}", ce.loss),
                });
            }
            loss_sum += ce.loss * chunk.len() as f64;
            predicted.extend(tape.value(&logits).data().chunks_exact(classes).map(argmax));
            actual.extend_from_slice(&y);

            let mut grads = tape.backward(logits, ce.grad_logits)?;
            let mut flat: Vec<Tensor<f32>> = state
                .model
                .params()
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    grads
                        .params
                        .remove(&i)
                        .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()))
                })
                .collect();
            let norm = clip_global_norm(&mut flat, self.config.clip_norm);
            if !norm.is_finite() {
                return Err(EpochError::Anomaly {
                    step: state.step,
                    detail: format!("gradient norm is {norm}"),
                });
            }
            let mut params: Vec<&mut Tensor<f32>> =
                state.model.params_mut().iter_mut().map(|p| &mut p.value).collect();
            state.optimizer.step(&mut params, &flat, size);
            state.step += 1;
        }
        let loss = loss_sum / order.len() as f64;
        Ok((MetricsReport::from_predictions(&predicted, &actual, classes, loss), lr))
    }
}

/// Convenience wrapper: train `model` for `config.epochs` epochs in memory.
pub fn train(
    model: ModelInstance<f32>,
    data: &WindowedDataset,
    config: TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    Trainer::new(model, data, config)?.run()
}

/// Eval-mode metrics on one split.
pub fn evaluate(
    model: &ModelInstance<f32>,
    data: &WindowedDataset,
    split: Split,
) -> Result<MetricsReport, TrainError> {
    let indices = data.indices(split);
    if indices.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    let classes = model.config().num_classes;
    let mut loss_sum = 0.0;
    let mut predicted = Vec::with_capacity(indices.len());
    let mut actual = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, y) = data.batch(chunk);
        let logits = model.infer(x)?;
        loss_sum += softmax_cross_entropy(&logits, &y)?.loss * chunk.len() as f64;
        predicted.extend(logits.data().chunks_exact(classes).map(argmax));
        actual.extend_from_slice(&y);
    }
    Ok(MetricsReport::from_predictions(
        &predicted,
        &actual,
        classes,
        loss_sum / indices.len() as f64,
    ))
}
