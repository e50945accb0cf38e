use serde::{Deserialize, Serialize};

use super::{Mode, Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Per-channel running statistics used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T = f32> {
    x_hat: Tensor<T>,
    inv_std: Vec<f64>,
    mode: Mode,
}

fn check_affine<T: Real>(
    channels: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
) -> Result<(), TensorError> {
    for (what, len) in [
        ("gamma", gamma.len()),
        ("beta", beta.len()),
        ("running stats", stats.channels()),
    ] {
        if len != channels {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                what: what.into(),
                expected: vec![channels],
                actual: vec![len],
            });
        }
    }
    Ok(())
}

/// Normalizes each channel over `(batch, length)`.
///
/// Train mode uses batch statistics (biased variance) and folds them into
/// `stats` with the configured momentum (unbiased variance); eval mode uses
/// `stats` unchanged.
pub fn batch_norm_forward<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
    cfg: BatchNormConfig,
) -> Result<(Tensor<T>, BatchNormCache<T>), TensorError> {
    let (batch, channels, len) = input.dims3("batch_norm")?;
    check_affine(channels, gamma, beta, stats)?;
    let count = batch * len;
    if mode == Mode::Train && count < 2 {
        return Err(TensorError::VarianceUndefined { count });
    }
    if count == 0 {
        return Err(TensorError::EmptyBatch { op: "batch_norm" });
    }
    let x = input.data();
    let mut x_hat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(channels);

    for c in 0..channels {
        let rows = (0..batch).map(|b| (b * channels + c) * len);
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0f64;
                for r in rows.clone() {
                    sum += x[r..r + len].iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0f64;
                for r in rows.clone() {
                    sq += x[r..r + len]
                        .iter()
                        .map(|v| (v.to_f64_lossy() - mean).powi(2))
                        .sum::<f64>();
                }
                let var = sq / count as f64;
                let m = cfg.momentum;
                let unbiased = sq / (count - 1) as f64;
                stats.mean[c] = T::from_f64_lossy((1.0 - m) * stats.mean[c].to_f64_lossy() + m * mean);
                stats.var[c] =
                    T::from_f64_lossy((1.0 - m) * stats.var[c].to_f64_lossy() + m * unbiased);
                (mean, var)
            }
            Mode::Eval => (stats.mean[c].to_f64_lossy(), stats.var[c].to_f64_lossy()),
        };
        let istd = 1.0 / (var + cfg.eps).sqrt();
        inv_std.push(istd);
        let (g, bt) = (gamma.data()[c].to_f64_lossy(), beta.data()[c].to_f64_lossy());
        for r in rows {
            for i in r..r + len {
                let h = (x[i].to_f64_lossy() - mean) * istd;
                x_hat[i] = T::from_f64_lossy(h);
                out[i] = T::from_f64_lossy(g * h + bt);
            }
        }
    }

    let shape = input.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        BatchNormCache {
            x_hat: Tensor::new(shape, x_hat)?,
            inv_std,
            mode,
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batch_norm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), TensorError> {
    if upstream.shape() != cache.x_hat.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "batch_norm backward",
            what: "upstream gradient".into(),
            expected: cache.x_hat.shape().to_vec(),
            actual: upstream.shape().to_vec(),
        });
    }
    let (batch, channels, len) = upstream.dims3("batch_norm backward")?;
    let n = (batch * len) as f64;
    let g = upstream.data();
    let xh = cache.x_hat.data();
    let mut gx = vec![T::zero(); g.len()];
    let mut ggamma = vec![T::zero(); channels];
    let mut gbeta = vec![T::zero(); channels];

    for c in 0..channels {
        let rows: Vec<usize> = (0..batch).map(|b| (b * channels + c) * len).collect();
        let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
        for &r in &rows {
            for i in r..r + len {
                let gi = g[i].to_f64_lossy();
                sum_g += gi;
                sum_gx += gi * xh[i].to_f64_lossy();
            }
        }
        ggamma[c] = T::from_f64_lossy(sum_gx);
        gbeta[c] = T::from_f64_lossy(sum_g);
        let scale = gamma.data()[c].to_f64_lossy() * cache.inv_std[c];
        for &r in &rows {
            for i in r..r + len {
                let gi = g[i].to_f64_lossy();
                gx[i] = T::from_f64_lossy(match cache.mode {
                    Mode::Train => scale / n * (n * gi - sum_g - xh[i].to_f64_lossy() * sum_gx),
                    Mode::Eval => scale * gi,
                });
            }
        }
    }
    Ok((
        Tensor::new(upstream.shape().to_vec(), gx)?,
        Tensor::new(vec![channels], ggamma)?,
        Tensor::new(vec![channels], gbeta)?,
    ))
}
