//! Fixtures shared by the benchmarks.

use automr_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// `n` rows of `dims` uniform features with a smooth target.
pub fn regression_data(n: usize, dims: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dims).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let y = x.iter().map(|r| -r.iter().map(|v| (v - 0.3).powi(2)).sum::<f64>()).collect();
    (x, y)
}
