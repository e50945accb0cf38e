use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSize {
    pub lr: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor<f32>> = shapes.into_iter().map(|s| Tensor::zeros(s.to_vec())).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// `p ← p − lr·wd·p − lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [&mut Tensor<f32>], grads: &[Tensor<f32>], size: StepSize) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let (lr, wd) = (size.lr, size.weight_decay);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gi = gi as f64;
                let m_new = BETA1 * *mi as f64 + (1.0 - BETA1) * gi;
                let v_new = BETA2 * *vi as f64 + (1.0 - BETA2) * gi * gi;
                *mi = m_new as f32;
                *vi = v_new as f32;
                let update = (m_new / bc1) / ((v_new / bc2).sqrt() + ADAM_EPS);
                let old = *pi as f64;
                *pi = (old - lr * wd * old - lr * update) as f32;
            }
        }
    }
}

/// Global L2 norm over all gradient tensors, accumulated in f64.
pub fn global_norm(grads: &[Tensor<f32>]) -> f64 {
    grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor<f32>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = (*v as f64 * scale) as f32;
            }
        }
    }
    norm
}
