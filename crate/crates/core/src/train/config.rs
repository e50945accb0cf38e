use serde::{Deserialize, Serialize};

use super::TrainError;

/// Learning-rate schedule, stepped once per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scheduler {
    /// `lr · ½(1 + cos(π·e/E))` for epoch `e` of `E`.
    #[default]
    Cosine,
    /// Multiply by `factor` after `patience` epochs without a lower train loss.
    Plateau { factor: f64, patience: usize },
    None,
}

fn default_clip() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default)]
    pub scheduler: Scheduler,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            scheduler: Scheduler::Cosine,
            seed: 0,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(self.clip_norm > 0.0) {
            return fail(format!("clip_norm {} must be > 0", self.clip_norm));
        }
        if let Scheduler::Plateau { factor, .. } = self.scheduler {
            if !(factor > 0.0 && factor < 1.0) {
                return fail(format!("plateau factor {factor} outside (0, 1)"));
            }
        }
        Ok(())
    }
}

/// Scheduler bookkeeping carried in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    /// Plateau multiplier accumulated so far.
    pub scale: f64,
    pub best_loss: Option<f64>,
    pub bad_epochs: usize,
}

impl Default for SchedulerState {
    fn default() -> Self {
        Self {
            scale: 1.0,
            best_loss: None,
            bad_epochs: 0,
        }
    }
}

impl SchedulerState {
    /// Schedule factor for `epoch` (0-based) of `epochs`.
    pub fn factor(&self, scheduler: Scheduler, epoch: usize, epochs: usize) -> f64 {
        match scheduler {
            Scheduler::Cosine => {
                let progress = epoch as f64 / epochs.max(1) as f64;
                0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
            Scheduler::Plateau { .. } => self.scale,
            Scheduler::None => 1.0,
        }
    }

    /// Records an epoch's mean train loss.
    pub fn observe(&mut self, scheduler: Scheduler, train_loss: f64) {
        let Scheduler::Plateau { factor, patience } = scheduler else {
            return;
        };
        match self.best_loss {
            Some(best) if train_loss >= best => {
                self.bad_epochs += 1;
                if self.bad_epochs > patience {
                    self.scale *= factor;
                    self.bad_epochs = 0;
                }
            }
            _ => {
                self.best_loss = Some(train_loss);
                self.bad_epochs = 0;
            }
        }
    }
}
