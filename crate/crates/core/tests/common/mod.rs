//! Oracles shared by the integration tests. Nothing here calls into the
//! backward passes it is used to check.
#![allow(dead_code)]

use automr_core::tensor::{ConvMode, ConvSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + FD_STEP;
            let up = f(&probe);
            probe.data_mut()[i] = orig - FD_STEP;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest elementwise deviation relative to the gradient's scale:
/// `max |a - n| / max(max |a|, max |n|, floor)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(floor, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}

pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Nested-loop convolution straight from the definition.
pub fn naive_conv(
    x: &Tensor<f64>,
    spec: &ConvSpec,
    w: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
) -> Vec<f64> {
    let (batch, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let span = spec.dilation * (spec.kernel - 1) + 1;
    let padded = len + 2 * spec.padding;
    if padded < span {
        return Vec::new();
    }
    let out_len = (padded - span) / spec.stride + 1;
    let c_out = spec.out_channels;
    let mut out = vec![0.0; batch * c_out * out_len];
    for b in 0..batch {
        for co in 0..c_out {
            for t in 0..out_len {
                let mut acc = bias.map_or(0.0, |bb| bb.data()[co]);
                let inputs: Vec<usize> = match spec.mode {
                    ConvMode::Depthwise => vec![co],
                    _ => (0..c_in).collect(),
                };
                for (slot, &ci) in inputs.iter().enumerate() {
                    for j in 0..spec.kernel {
                        let pos = (t * spec.stride + j * spec.dilation) as i64 - spec.padding as i64;
                        if pos < 0 || pos >= len as i64 {
                            continue;
                        }
                        let wv = match spec.mode {
                            ConvMode::Depthwise => w.data()[co * spec.kernel + j],
                            _ => w.data()[(co * c_in + slot) * spec.kernel + j],
                        };
                        acc += wv * x.data()[(b * c_in + ci) * len + pos as usize];
                    }
                }
                out[(b * c_out + co) * out_len + t] = acc;
            }
        }
    }
    out
}

/// A random valid convolution spec in the small-shape regime.
pub fn random_spec(rng: &mut ChaCha8Rng) -> ConvSpec {
    let mode = match rng.random_range(0..3) {
        0 => ConvMode::Standard,
        1 => ConvMode::Depthwise,
        _ => ConvMode::Pointwise,
    };
    let c_in = rng.random_range(1..=4);
    let (c_out, kernel, dilation) = match mode {
        ConvMode::Standard => (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=3)),
        ConvMode::Depthwise => (c_in, rng.random_range(1..=5), rng.random_range(1..=3)),
        ConvMode::Pointwise => (rng.random_range(1..=4), 1, 1),
    };
    ConvSpec {
        in_channels: c_in,
        out_channels: c_out,
        kernel,
        stride: rng.random_range(1..=2),
        dilation,
        padding: rng.random_range(0..=2),
        mode,
    }
}

/// A small normalized synthetic dataset: 3 channels, W=32, 3 classes.
pub fn tiny_dataset(seed: u64) -> automr_core::data::WindowedDataset {
    use automr_core::data::synthetic::{synthetic_dataset, SyntheticConfig};
    synthetic_dataset(&SyntheticConfig {
        window_length: 32,
        train_per_class: 16,
        test_per_class: 6,
        seed,
        ..SyntheticConfig::default()
    })
    .normalize()
    .unwrap()
}

pub fn tiny_model_config() -> automr_core::model::QuartzConfig {
    use automr_core::model::{BlockConfig, QuartzConfig};
    QuartzConfig {
        in_channels: 3,
        num_classes: 3,
        blocks: vec![BlockConfig::new(1, 8, 3), BlockConfig::new(1, 12, 5)],
        head_channels: 8,
        dropout: 0.1,
        stem_kernel: 3,
    }
}

pub fn tiny_train_config(epochs: usize, seed: u64) -> automr_core::train::TrainConfig {
    automr_core::train::TrainConfig {
        epochs,
        batch_size: 8,
        learning_rate: 3e-3,
        weight_decay: 1e-4,
        seed,
        ..Default::default()
    }
}
