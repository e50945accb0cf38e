use super::{Real, Tensor, TensorError};

/// Mean cross-entropy over the batch and its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct CrossEntropy<T = f32> {
    pub loss: f64,
    pub grad_logits: Tensor<T>,
}

/// Row-wise softmax via the max-shifted log-sum-exp.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (_, classes) = logits.dims2("softmax")?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(classes.max(1)) {
        out.extend(softmax_row(row).into_iter().map(T::from_f64_lossy));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

fn softmax_row<T: Real>(row: &[T]) -> Vec<f64> {
    let max = row
        .iter()
        .map(|v| v.to_f64_lossy())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    targets: &[usize],
) -> Result<CrossEntropy<T>, TensorError> {
    let (batch, classes) = logits.dims2("softmax_cross_entropy")?;
    if batch == 0 {
        return Err(TensorError::EmptyBatch {
            op: "softmax_cross_entropy",
        });
    }
    if targets.len() != batch {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_cross_entropy",
            what: "target count".into(),
            expected: vec![batch],
            actual: vec![targets.len()],
        });
    }
    if let Some((row, &target)) = targets.iter().enumerate().find(|(_, &t)| t >= classes) {
        return Err(TensorError::TargetOutOfRange {
            row,
            target,
            classes,
        });
    }
    let inv_batch = 1.0 / batch as f64;
    let mut loss = 0.0f64;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &target) in logits.data().chunks_exact(classes).zip(targets) {
        let max = row
            .iter()
            .map(|v| v.to_f64_lossy())
            .fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row
            .iter()
            .map(|v| (v.to_f64_lossy() - max).exp())
            .sum::<f64>()
            .ln()
            + max;
        loss += log_sum - row[target].to_f64_lossy();
        for (c, v) in row.iter().enumerate() {
            let p = (v.to_f64_lossy() - log_sum).exp();
            let onehot = if c == target { 1.0 } else { 0.0 };
            grad.push(T::from_f64_lossy((p - onehot) * inv_batch));
        }
    }
    Ok(CrossEntropy {
        loss: loss * inv_batch,
        grad_logits: Tensor::new(logits.shape().to_vec(), grad)?,
    })
}
