use super::{Real, Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct LinearGrads<T = f32> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize), TensorError> {
    let (batch, features) = x.dims2("linear")?;
    let (outputs, w_in) = weight.dims2("linear")?;
    if w_in != features {
        return Err(TensorError::ShapeMismatch {
            op: "linear",
            what: "input features".into(),
            expected: vec![w_in],
            actual: vec![features],
        });
    }
    if bias.shape() != [outputs] {
        return Err(TensorError::ShapeMismatch {
            op: "linear",
            what: "bias shape".into(),
            expected: vec![outputs],
            actual: bias.shape().to_vec(),
        });
    }
    Ok((batch, features, outputs))
}

/// `y = x · Wᵀ + b` with `x: [B, F]`, `W: [O, F]`, `b: [O]`.
pub fn linear_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let (batch, features, outputs) = check(x, weight, bias)?;
    let mut out: Vec<T> = bias.data().iter().copied().cycle().take(batch * outputs).collect();
    T::gemm(batch, features, outputs, x.data(), false, weight.data(), true, T::one(), &mut out);
    Tensor::new(vec![batch, outputs], out)
}

pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<LinearGrads<T>, TensorError> {
    let (batch, features) = x.dims2("linear backward")?;
    let (outputs, _) = weight.dims2("linear backward")?;
    if upstream.shape() != [batch, outputs] {
        return Err(TensorError::ShapeMismatch {
            op: "linear backward",
            what: "upstream gradient".into(),
            expected: vec![batch, outputs],
            actual: upstream.shape().to_vec(),
        });
    }
    let g = upstream.data();
    let mut gx = vec![T::zero(); batch * features];
    T::gemm(batch, outputs, features, g, false, weight.data(), false, T::zero(), &mut gx);
    let mut gw = vec![T::zero(); outputs * features];
    T::gemm(outputs, batch, features, g, true, x.data(), false, T::zero(), &mut gw);
    let gb = (0..outputs)
        .map(|o| T::from_f64_lossy((0..batch).map(|b| g[b * outputs + o].to_f64_lossy()).sum()))
        .collect();
    Ok(LinearGrads {
        input: Tensor::new(vec![batch, features], gx)?,
        weight: Tensor::new(vec![outputs, features], gw)?,
        bias: Tensor::new(vec![outputs], gb)?,
    })
}
