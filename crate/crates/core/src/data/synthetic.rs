//! Deterministic multi-class sinusoid data for tests, benchmarks and demos.
//!
//! Class `k` is a sinusoid with `2·(k+1)` cycles per window on every channel,
//! with a random phase per channel and additive Gaussian noise.

use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    ChannelSpec, DataError, DatasetSchema, Labeling, Normalization, Provenance, Split, SplitMode,
    WindowedDataset,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub channels: usize,
    pub window_length: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            channels: 3,
            window_length: 128,
            train_per_class: 100,
            test_per_class: 20,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Cycles per window for class `k`.
    pub fn cycles(&self, class: usize) -> f64 {
        2.0 * (class as f64 + 1.0)
    }

    pub fn schema(&self, window_stride: usize) -> DatasetSchema {
        DatasetSchema {
            name: "synthetic".into(),
            channels: (0..self.channels)
                .map(|c| ChannelSpec {
                    name: format!("ch{c}"),
                    modality: "synthetic".into(),
                    unit: "a.u.".into(),
                })
                .collect(),
            sampling_rate: self.window_length as f64,
            label_names: (0..self.classes).map(|k| format!("class{k}")).collect(),
            window_length: self.window_length,
            window_stride,
            split_ratio: 0.8,
            split_mode: SplitMode::ByWindow,
            labeling: Labeling::Majority,
            normalization: Normalization::Zscore,
            augmentation: Vec::new(),
        }
    }

    fn sample(&self, class: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
        let noise = Normal::new(0.0, self.noise).expect("noise must be finite and >= 0");
        let freq = self.cycles(class) / self.window_length as f64;
        let mut out = Vec::with_capacity(self.channels * len);
        for _ in 0..self.channels {
            let phase = rng.random_range(0.0..TAU);
            for t in 0..len {
                let v = (TAU * freq * t as f64 + phase).sin() + noise.sample(rng);
                out.push(v as f32);
            }
        }
        out
    }
}

/// An in-memory dataset with `train_per_class` train and `test_per_class`
/// test windows per class, already split and unnormalized.
pub fn synthetic_dataset(cfg: &SyntheticConfig) -> WindowedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = cfg.window_length;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    let mut provenance = Vec::new();
    let mut recordings = Vec::new();
    for (tag, per_class) in [(Split::Train, cfg.train_per_class), (Split::Test, cfg.test_per_class)] {
        for class in 0..cfg.classes {
            let rec = recordings.len() as u32;
            recordings.push(format!("{}-class{class}", tag_name(tag)));
            for i in 0..per_class {
                data.extend(cfg.sample(class, w, &mut rng));
                labels.push(class as u32);
                split.push(tag);
                provenance.push(Provenance {
                    recording: rec,
                    start: (i * w) as u64,
                });
            }
        }
    }
    let n = labels.len();
    WindowedDataset::from_parts(
        cfg.schema(w),
        Tensor::new(vec![n, cfg.channels, w], data).expect("synthetic shape"),
        labels,
        split,
        recordings,
        provenance,
        None,
    )
    .expect("synthetic dataset is well formed")
}

fn tag_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
    }
}

/// Writes a CSV corpus (`<class>_<i>.csv` with a `label` column) plus
/// `schema.json` into `dir`. Each recording is one continuous class signal
/// of `recording_len` samples, segmented with 50% overlap.
pub fn write_synthetic_corpus(
    dir: &Path,
    cfg: &SyntheticConfig,
    recordings_per_class: usize,
    recording_len: usize,
) -> Result<DatasetSchema, DataError> {
    let io = |path: &Path, e: std::io::Error| DataError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let schema = cfg.schema((cfg.window_length / 2).max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for class in 0..cfg.classes {
        for r in 0..recordings_per_class {
            let path = dir.join(format!("class{class}_{r:02}.csv"));
            let samples = cfg.sample(class, recording_len, &mut rng);
            let mut text = String::new();
            for c in 0..cfg.channels {
                text.push_str(&format!("ch{c},"));
            }
            text.push_str("label\n");
            for t in 0..recording_len {
                for c in 0..cfg.channels {
                    text.push_str(&format!("{},", samples[c * recording_len + t]));
                }
                text.push_str(&schema.label_names[class]);
                text.push('\n');
            }
            let mut f = fs::File::create(&path).map_err(|e| io(&path, e))?;
            f.write_all(text.as_bytes()).map_err(|e| io(&path, e))?;
        }
    }
    let path = dir.join("schema.json");
    let json = serde_json::to_string_pretty(&schema).expect("schema serializes");
    fs::write(&path, json).map_err(|e| io(&path, e))?;
    Ok(schema)
}
