use super::{DataError, LabeledRecording, Labeling};

/// One fixed-length slice of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    /// `[channels × length]`, channel-major.
    pub data: Vec<f32>,
    pub label: u32,
}

/// Start offsets `0, S, 2S, …` of every full window of length `W` in `L` samples.
pub fn window_offsets(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if window == 0 || stride == 0 || len < window {
        return Vec::new();
    }
    (0..=(len - window) / stride).map(|i| i * stride).collect()
}

/// Most frequent label, ties broken towards the lowest class id.
pub(crate) fn majority(labels: &[u32]) -> u32 {
    let max = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut counts = vec![0usize; max + 1];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    counts.iter().position(|&c| c == best).unwrap_or(0) as u32
}

/// Cuts `recording` into windows. A recording shorter than `window` yields none.
pub fn segment(
    recording: &LabeledRecording,
    window: usize,
    stride: usize,
    labeling: Labeling,
) -> Result<Vec<Window>, DataError> {
    if window == 0 {
        return Err(DataError::Schema("window length must be >= 1".into()));
    }
    if stride == 0 || stride > window {
        return Err(DataError::Schema(format!(
            "window stride must lie in [1, {window}], got {stride}"
        )));
    }
    let channels = recording.channels;
    Ok(window_offsets(recording.len(), window, stride)
        .into_iter()
        .map(|start| {
            let mut data = Vec::with_capacity(channels * window);
            for c in 0..channels {
                data.extend_from_slice(&recording.channel(c)[start..start + window]);
            }
            let labels = &recording.labels[start..start + window];
            let label = match labeling {
                Labeling::Majority => majority(labels),
                Labeling::LastSample => labels[window - 1],
            };
            Window { start, data, label }
        })
        .collect())
}
