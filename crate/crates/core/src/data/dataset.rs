use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    segment, AugmentKind, AugmentTarget, AugmentationSpec, DataError, DatasetSchema,
    LabeledRecording, Normalization, Split, SplitMode,
};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

/// Where a window came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Index into [`WindowedDataset::recordings`].
    pub recording: u32,
    pub start: u64,
}

/// Per-channel affine map applied by [`WindowedDataset::normalize`]:
/// `x' = (x - offset) / divisor`, or `0` where `divisor == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub mode: Normalization,
    pub offset: Vec<f64>,
    pub divisor: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub recordings: usize,
    pub windows: usize,
    /// `(recording id, length)` of recordings shorter than one window.
    pub skipped: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train: usize,
    pub test: usize,
    pub achieved_ratio: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    /// Windows appended per class by oversampling.
    pub added: Vec<usize>,
    /// Train windows modified in place by jitter/scale.
    pub modified: usize,
}

/// Canonical post-preprocessing store: `[N, C, W]` windows with labels,
/// split tags and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    schema: DatasetSchema,
    windows: Tensor<f32>,
    labels: Vec<u32>,
    split: Vec<Split>,
    recordings: Vec<String>,
    provenance: Vec<Provenance>,
    normalization: Option<NormalizationRecord>,
}

const NORM_EPS: f64 = 1e-8;

impl WindowedDataset {
    /// Segments every recording. Windows are ordered by recording id, then offset;
    /// all start in the train split.
    pub fn from_recordings(
        schema: DatasetSchema,
        recordings: &[LabeledRecording],
    ) -> Result<(Self, SegmentSummary), DataError> {
        schema.validate()?;
        let mut sorted: Vec<&LabeledRecording> = recordings.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let (c, w) = (schema.num_channels(), schema.window_length);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut provenance = Vec::new();
        let mut summary = SegmentSummary {
            recordings: sorted.len(),
            ..Default::default()
        };
        for (ri, rec) in sorted.iter().enumerate() {
            if rec.channels != c {
                return Err(DataError::Schema(format!(
                    "recording {} has {} channels, schema declares {c}",
                    rec.id, rec.channels
                )));
            }
            if rec.len() < w {
                log::warn!(
                    "skipping recording {} ({} samples < window {w})",
                    rec.id,
                    rec.len()
                );
                summary.skipped.push((rec.id.clone(), rec.len()));
                continue;
            }
            for win in segment(rec, w, schema.window_stride, schema.labeling)? {
                data.extend_from_slice(&win.data);
                labels.push(win.label);
                provenance.push(Provenance {
                    recording: ri as u32,
                    start: win.start as u64,
                });
            }
        }
        summary.windows = labels.len();
        let n = labels.len();
        let ds = Self::from_parts(
            schema,
            Tensor::new(vec![n, c, w], data)?,
            labels,
            vec![Split::Train; n],
            sorted.iter().map(|r| r.id.clone()).collect(),
            provenance,
            None,
        )?;
        Ok((ds, summary))
    }

    /// Assembles a dataset, checking every structural invariant.
    pub fn from_parts(
        schema: DatasetSchema,
        windows: Tensor<f32>,
        labels: Vec<u32>,
        split: Vec<Split>,
        recordings: Vec<String>,
        provenance: Vec<Provenance>,
        normalization: Option<NormalizationRecord>,
    ) -> Result<Self, DataError> {
        schema.validate()?;
        let n = labels.len();
        let expected = [n, schema.num_channels(), schema.window_length];
        if windows.shape() != expected {
            return Err(DataError::Format(format!(
                "windows have shape {:?}, schema implies {expected:?}",
                windows.shape()
            )));
        }
        if split.len() != n || provenance.len() != n {
            return Err(DataError::Format(format!(
                "{n} labels but {} split tags and {} provenance rows",
                split.len(),
                provenance.len()
            )));
        }
        let classes = schema.num_classes() as u32;
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Format(format!(
                "label {bad} outside [0, {classes})"
            )));
        }
        if let Some(p) = provenance
            .iter()
            .find(|p| p.recording as usize >= recordings.len())
        {
            return Err(DataError::Format(format!(
                "provenance refers to recording {} of {}",
                p.recording,
                recordings.len()
            )));
        }
        if let Some(norm) = &normalization {
            let c = schema.num_channels();
            if norm.offset.len() != c || norm.divisor.len() != c {
                return Err(DataError::Format(
                    "normalization record does not match the channel count".into(),
                ));
            }
        }
        Ok(Self {
            schema,
            windows,
            labels,
            split,
            recordings,
            provenance,
            normalization,
        })
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn windows(&self) -> &Tensor<f32> {
        &self.windows
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn split_tags(&self) -> &[Split] {
        &self.split
    }

    pub fn recordings(&self) -> &[String] {
        &self.recordings
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn normalization(&self) -> Option<&NormalizationRecord> {
        self.normalization.as_ref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        self.schema.num_channels()
    }

    pub fn window_len(&self) -> usize {
        self.schema.window_length
    }

    pub fn num_classes(&self) -> usize {
        self.schema.num_classes()
    }

    fn window_size(&self) -> usize {
        self.num_channels() * self.window_len()
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let s = self.window_size();
        &self.windows.data()[i * s..(i + 1) * s]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for i in self.indices(split) {
            counts[self.labels[i] as usize] += 1;
        }
        counts
    }

    /// Stacks the given windows into `[B, C, W]` with their labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let s = self.window_size();
        let mut data = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            data.extend_from_slice(self.window(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i] as usize).collect();
        let t = Tensor::new(vec![indices.len(), self.num_channels(), self.window_len()], data)
            .expect("batch shape");
        (t, labels)
    }

    /// Keeps only `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let (windows, _) = self.batch(indices);
        Self {
            schema: self.schema.clone(),
            windows,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: indices.iter().map(|&i| self.split[i]).collect(),
            recordings: self.recordings.clone(),
            provenance: indices.iter().map(|&i| self.provenance[i]).collect(),
            normalization: self.normalization.clone(),
        }
    }

    /// Assigns train/test tags. Deterministic in `seed`.
    pub fn split(
        mut self,
        ratio: f64,
        mode: SplitMode,
        seed: u64,
    ) -> Result<(Self, SplitSummary), DataError> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(DataError::Schema(format!("split ratio {ratio} outside (0, 1)")));
        }
        let n = self.len();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        let mut train = vec![false; n];
        match mode {
            SplitMode::ByWindow => {
                if n < 2 {
                    return Err(DataError::CannotSplit(format!(
                        "{n} window(s) cannot fill both splits"
                    )));
                }
                let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                for &i in &order[..n_train] {
                    train[i] = true;
                }
            }
            SplitMode::ByRecording => {
                let mut groups: Vec<Vec<usize>> = vec![Vec::new(); self.recordings.len()];
                for (i, p) in self.provenance.iter().enumerate() {
                    groups[p.recording as usize].push(i);
                }
                groups.retain(|g| !g.is_empty());
                if groups.len() < 2 {
                    return Err(DataError::CannotSplit(format!(
                        "by-recording split needs at least 2 recordings with windows, found {}",
                        groups.len()
                    )));
                }
                groups.shuffle(&mut rng);
                let target = ratio * n as f64;
                let mut assigned = vec![false; groups.len()];
                let mut total = 0usize;
                for (gi, g) in groups.iter().enumerate() {
                    let with = (total + g.len()) as f64;
                    if (with - target).abs() < (total as f64 - target).abs() {
                        assigned[gi] = true;
                        total += g.len();
                    }
                }
                if assigned.iter().all(|&a| a) {
                    *assigned.last_mut().expect("non-empty") = false;
                } else if assigned.iter().all(|&a| !a) {
                    assigned[0] = true;
                }
                for (g, &a) in groups.iter().zip(&assigned) {
                    for &i in g {
                        train[i] = a;
                    }
                }
            }
        }
        self.split = train
            .iter()
            .map(|&t| if t { Split::Train } else { Split::Test })
            .collect();
        let n_train = train.iter().filter(|&&t| t).count();
        let achieved = n_train as f64 / n as f64;
        let warning = ((achieved - ratio).abs() > 0.1).then(|| {
            let msg = format!(
                "requested split ratio {ratio:.3}, achieved {achieved:.3} with {} recordings",
                self.recordings.len()
            );
            log::warn!("{msg}");
            msg
        });
        Ok((
            self,
            SplitSummary {
                train: n_train,
                test: n - n_train,
                achieved_ratio: achieved,
                warning,
            },
        ))
    }

    /// Per-channel `(mean, population std, min, max)` over the train split.
    pub fn train_channel_stats(&self) -> Vec<(f64, f64, f64, f64)> {
        let (c, w) = (self.num_channels(), self.window_len());
        let train = self.indices(Split::Train);
        (0..c)
            .map(|ch| {
                let values = || {
                    train
                        .iter()
                        .flat_map(move |&i| self.window(i)[ch * w..(ch + 1) * w].iter())
                        .map(|&v| v as f64)
                };
                let count = (train.len() * w).max(1) as f64;
                let mean = values().sum::<f64>() / count;
                let var = values().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
                let min = values().fold(f64::INFINITY, f64::min);
                let max = values().fold(f64::NEG_INFINITY, f64::max);
                (mean, var.sqrt(), min, max)
            })
            .collect()
    }

    /// Normalizes with train-split statistics using the schema's mode.
    pub fn normalize(self) -> Result<Self, DataError> {
        let mode = self.schema.normalization;
        self.normalize_with(mode)
    }

    pub fn normalize_with(mut self, mode: Normalization) -> Result<Self, DataError> {
        if self.normalization.is_some() {
            return Err(DataError::AlreadyNormalized);
        }
        if self.indices(Split::Train).is_empty() {
            return Err(DataError::Empty("normalization needs train windows".into()));
        }
        let stats = self.train_channel_stats();
        let (offset, divisor): (Vec<f64>, Vec<f64>) = stats
            .iter()
            .enumerate()
            .map(|(ch, &(mean, std, min, max))| {
                let (off, div) = match mode {
                    Normalization::Zscore => (mean, if std > 0.0 { std + NORM_EPS } else { 0.0 }),
                    Normalization::Minmax => (min, if max > min { max - min } else { 0.0 }),
                    Normalization::None => (0.0, 1.0),
                };
                if div == 0.0 {
                    log::warn!(
                        "channel {} is constant on the train split; normalized to zero",
                        self.schema.channels[ch].name
                    );
                }
                (off, div)
            })
            .unzip();
        if mode != Normalization::None {
            let (c, w) = (self.num_channels(), self.window_len());
            for win in self.windows.data_mut().chunks_exact_mut(c * w) {
                for ch in 0..c {
                    for v in &mut win[ch * w..(ch + 1) * w] {
                        *v = if divisor[ch] == 0.0 {
                            0.0
                        } else {
                            ((*v as f64 - offset[ch]) / divisor[ch]) as f32
                        };
                    }
                }
            }
        }
        self.normalization = Some(NormalizationRecord {
            mode,
            offset,
            divisor,
        });
        Ok(self)
    }

    /// Applies train-split augmentations in order. Test windows are never touched.
    pub fn augment(
        mut self,
        specs: &[AugmentationSpec],
        seed: u64,
    ) -> Result<(Self, AugmentSummary), DataError> {
        let mut summary = AugmentSummary {
            added: vec![0; self.num_classes()],
            modified: 0,
        };
        for spec in specs {
            if spec.split != Split::Train {
                return Err(DataError::AugmentTestSplit);
            }
            if !(spec.magnitude >= 0.0) {
                return Err(DataError::Schema(format!(
                    "augmentation magnitude {} must be >= 0",
                    spec.magnitude
                )));
            }
        }
        for (k, spec) in specs.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100 + k as u64));
            match spec.kind {
                AugmentKind::Jitter | AugmentKind::Scale => {
                    if spec.magnitude == 0.0 {
                        continue;
                    }
                    let targets = self.augment_targets(spec.target);
                    summary.modified += targets.len();
                    if spec.kind == AugmentKind::Jitter {
                        let sigma = self.jitter_sigmas(spec.magnitude);
                        for i in targets {
                            self.jitter_window(i, &sigma, &mut rng);
                        }
                    } else {
                        let s = self.window_size();
                        for i in targets {
                            let factor = rng.random_range(1.0 - spec.magnitude..=1.0 + spec.magnitude);
                            for v in &mut self.windows.data_mut()[i * s..(i + 1) * s] {
                                *v = (*v as f64 * factor) as f32;
                            }
                        }
                    }
                }
                AugmentKind::Oversample => {
                    let added = self.oversample(spec, &mut rng)?;
                    for (a, b) in summary.added.iter_mut().zip(added) {
                        *a += b;
                    }
                }
            }
        }
        Ok((self, summary))
    }

    fn augment_targets(&self, target: AugmentTarget) -> Vec<usize> {
        let train = self.indices(Split::Train);
        match target {
            AugmentTarget::All => train,
            AugmentTarget::MinorityClasses => {
                let counts = self.class_counts(Split::Train);
                let max = counts.iter().copied().max().unwrap_or(0);
                train
                    .into_iter()
                    .filter(|&i| counts[self.labels[i] as usize] < max)
                    .collect()
            }
        }
    }

    fn jitter_sigmas(&self, magnitude: f64) -> Vec<f64> {
        self.train_channel_stats()
            .iter()
            .map(|&(_, std, _, _)| magnitude * std)
            .collect()
    }

    fn jitter_window(&mut self, i: usize, sigma: &[f64], rng: &mut ChaCha8Rng) {
        let (s, w) = (self.window_size(), self.window_len());
        let win = &mut self.windows.data_mut()[i * s..(i + 1) * s];
        for (ch, &sd) in sigma.iter().enumerate() {
            for v in &mut win[ch * w..(ch + 1) * w] {
                let z: f64 = StandardNormal.sample(rng);
                *v = (*v as f64 + sd * z) as f32;
            }
        }
    }

    fn oversample(
        &mut self,
        spec: &AugmentationSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>, DataError> {
        let counts = self.class_counts(Split::Train);
        let max = counts.iter().copied().max().unwrap_or(0);
        let need = (spec.oversample_ratio() * max as f64).ceil() as usize;
        let sigma = self.jitter_sigmas(spec.magnitude);
        let mut added = vec![0; counts.len()];
        let mut fresh = Vec::new();
        let train = self.indices(Split::Train);
        let s = self.window_size();
        for (class, &count) in counts.iter().enumerate() {
            if count >= need {
                continue;
            }
            if count == 0 {
                log::warn!(
                    "class {} has no train windows; cannot oversample",
                    self.schema.label_names[class]
                );
                continue;
            }
            let members: Vec<usize> = train
                .iter()
                .copied()
                .filter(|&i| self.labels[i] as usize == class)
                .collect();
            for _ in count..need {
                let src = members[rng.random_range(0..members.len())];
                fresh.push((src, class));
                added[class] += 1;
            }
        }
        if fresh.is_empty() {
            return Ok(added);
        }
        let base = self.labels.len();
        let mut data = std::mem::replace(&mut self.windows, Tensor::zeros([0])).into_data();
        for &(src, class) in &fresh {
            data.extend_from_within(src * s..(src + 1) * s);
            self.labels.push(class as u32);
            self.split.push(Split::Train);
            self.provenance.push(self.provenance[src]);
        }
        let n = self.labels.len();
        self.windows = Tensor::new(vec![n, self.num_channels(), self.window_len()], data)?;
        if spec.magnitude > 0.0 {
            for i in base..n {
                self.jitter_window(i, &sigma, rng);
            }
        }
        debug_assert_eq!(self.windows.len(), self.labels.len() * s);
        Ok(added)
    }

    /// Drops the test split and re-splits the train windows into train and a
    /// held-out `fraction` (reported as the test split of the result).
    pub fn carve_validation(&self, fraction: f64, seed: u64) -> Result<Self, DataError> {
        let train = self.indices(Split::Train);
        let sub = self.subset(&train);
        let (carved, _) = sub.split(1.0 - fraction, SplitMode::ByWindow, derive_seed(seed, 7))?;
        Ok(carved)
    }
}
