use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Mode, Real, Tensor, TensorError};
use crate::seed::derive_seed;

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given its forward output.
pub fn relu_backward<T: Real>(output: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(upstream.shape().to_vec(), data).expect("relu gradient shape")
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "add",
            what: "operand shape".into(),
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Identifies one dropout draw: the same key always yields the same mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DropoutKey {
    pub seed: u64,
    pub layer: u64,
    pub step: u64,
}

impl DropoutKey {
    fn stream_seed(&self) -> u64 {
        derive_seed(derive_seed(self.seed, self.layer), self.step)
    }
}

/// Scaled keep-mask: `0` for dropped units, `1/(1-rate)` for kept ones.
pub fn dropout_mask<T: Real>(len: usize, rate: f64, key: DropoutKey) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(key.stream_seed());
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

/// Inverted dropout. Identity in eval mode or at rate 0, in which case no mask
/// is returned.
pub fn dropout_forward<T: Real>(
    x: &Tensor<T>,
    rate: f64,
    key: DropoutKey,
    mode: Mode,
) -> Result<(Tensor<T>, Option<Vec<T>>), TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidRate(rate));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let mask = dropout_mask(x.len(), rate, key);
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward<T: Real>(mask: Option<&[T]>, upstream: &Tensor<T>) -> Tensor<T> {
    match mask {
        None => upstream.clone(),
        Some(mask) => {
            let data = upstream.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
            Tensor::new(upstream.shape().to_vec(), data).expect("dropout gradient shape")
        }
    }
}
