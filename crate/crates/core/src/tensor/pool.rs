use super::{Real, Tensor, TensorError};

/// Mean over the time axis: `[B, C, L]` to `[B, C]`.
pub fn global_avg_pool_forward<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (batch, channels, len) = x.dims3("global_avg_pool")?;
    if len == 0 {
        return Err(TensorError::EmptyBatch {
            op: "global_avg_pool",
        });
    }
    let data = x
        .data()
        .chunks_exact(len)
        .map(|row| T::from_f64_lossy(row.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / len as f64))
        .collect();
    Tensor::new(vec![batch, channels], data)
}

pub fn global_avg_pool_backward<T: Real>(
    input_shape: &[usize],
    upstream: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let len = input_shape[2];
    if upstream.shape() != &input_shape[..2] {
        return Err(TensorError::ShapeMismatch {
            op: "global_avg_pool backward",
            what: "upstream gradient".into(),
            expected: input_shape[..2].to_vec(),
            actual: upstream.shape().to_vec(),
        });
    }
    let inv = T::from_f64_lossy(1.0 / len as f64);
    let mut data = Vec::with_capacity(upstream.len() * len);
    for &g in upstream.data() {
        data.extend(std::iter::repeat_n(g * inv, len));
    }
    Tensor::new(input_shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_averages_time() {
        let x = Tensor::<f64>::from_f64([1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 4.0, 4.0]).unwrap();
        let y = global_avg_pool_forward(&x).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0]);
        let g = global_avg_pool_backward(x.shape(), &Tensor::<f64>::full([1, 2], 3.0)).unwrap();
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }
}
