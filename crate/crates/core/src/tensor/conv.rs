use serde::{Deserialize, Serialize};

use super::{Real, Tensor, TensorError};

/// How the channels of a 1D convolution are connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    /// Every output channel sees every input channel: weight `[C_out, C_in, k]`.
    Standard,
    /// One temporal filter per channel: weight `[C, 1, k]`.
    Depthwise,
    /// A 1×1 channel mix: weight `[C_out, C_in, 1]`.
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub mode: ConvMode,
}

impl ConvSpec {
    pub fn standard(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            dilation: 1,
            padding: 0,
            mode: ConvMode::Standard,
        }
    }

    pub fn depthwise(channels: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            in_channels: channels,
            out_channels: channels,
            kernel,
            stride: 1,
            dilation,
            padding: 0,
            mode: ConvMode::Depthwise,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: 1,
            stride: 1,
            dilation: 1,
            padding: 0,
            mode: ConvMode::Pointwise,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    /// Zero padding that preserves length at stride 1. Only exact for odd kernels.
    pub fn with_same_padding(mut self) -> Self {
        self.padding = self.dilation * (self.kernel - 1) / 2;
        self
    }

    /// Number of input samples covered by one output position.
    pub fn span(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |msg: String| Err(TensorError::InvalidSpec(msg));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad(format!(
                "channel counts must be positive (in={}, out={})",
                self.in_channels, self.out_channels
            ));
        }
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return bad("kernel, stride and dilation must be >= 1".into());
        }
        match self.mode {
            ConvMode::Depthwise if self.out_channels != self.in_channels => bad(format!(
                "depthwise needs out_channels == in_channels, got {} vs {}",
                self.out_channels, self.in_channels
            )),
            ConvMode::Pointwise if self.kernel != 1 || self.dilation != 1 => {
                bad("pointwise needs kernel == 1 and dilation == 1".into())
            }
            _ => Ok(()),
        }
    }

    /// `floor((L + 2p - d(k-1) - 1) / s) + 1`, or `None` when that is below 1.
    pub fn output_len(&self, input_len: usize) -> Option<usize> {
        let padded = input_len + 2 * self.padding;
        if padded < self.span() {
            return None;
        }
        Some((padded - self.span()) / self.stride + 1)
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        match self.mode {
            ConvMode::Depthwise => [self.in_channels, 1, self.kernel],
            _ => [self.out_channels, self.in_channels, self.kernel],
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    /// Fan-in of one output unit, used for He initialization.
    pub fn fan_in(&self) -> usize {
        match self.mode {
            ConvMode::Depthwise => self.kernel,
            _ => self.in_channels * self.kernel,
        }
    }

    fn is_plain_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Output positions `t_lo..t_hi` whose tap `j` reads inside the input,
    /// and the input position read at `t_lo`.
    fn tap_range(&self, j: usize, len: usize, out_len: usize) -> (usize, usize, usize) {
        let (s, off, pad) = (self.stride, j * self.dilation, self.padding);
        let t_lo = if pad > off { (pad - off).div_ceil(s) } else { 0 };
        if len + pad <= off {
            return (0, 0, 0);
        }
        let t_hi = ((len - 1 + pad - off) / s + 1).min(out_len);
        if t_lo >= t_hi {
            return (0, 0, 0);
        }
        (t_lo, t_hi, t_lo * s + off - pad)
    }
}

/// Forward state retained for [`conv1d_backward`].
#[derive(Debug, Clone)]
pub struct ConvRecord<T = f32> {
    pub spec: ConvSpec,
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub has_bias: bool,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

struct Checked {
    batch: usize,
    len: usize,
    out_len: usize,
}

fn check<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Checked, TensorError> {
    spec.validate()?;
    let (batch, channels, len) = input.dims3("conv1d")?;
    if channels != spec.in_channels {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d",
            what: "input channels".into(),
            expected: vec![spec.in_channels],
            actual: vec![channels],
        });
    }
    if weight.shape() != spec.weight_shape() {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d",
            what: "weight shape".into(),
            expected: spec.weight_shape().to_vec(),
            actual: weight.shape().to_vec(),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                what: "bias shape".into(),
                expected: vec![spec.out_channels],
                actual: b.shape().to_vec(),
            });
        }
    }
    let out_len = spec.output_len(len).ok_or(TensorError::WindowTooShort {
        op: "conv1d",
        needed: spec.span().saturating_sub(2 * spec.padding),
        got: len,
    })?;
    Ok(Checked {
        batch,
        len,
        out_len,
    })
}

fn im2col<T: Real>(x: &[T], spec: &ConvSpec, len: usize, out_len: usize, col: &mut [T]) {
    let k = spec.kernel;
    for ci in 0..spec.in_channels {
        let row = &x[ci * len..(ci + 1) * len];
        for j in 0..k {
            let dst = &mut col[(ci * k + j) * out_len..(ci * k + j + 1) * out_len];
            let (lo, hi, p0) = spec.tap_range(j, len, out_len);
            dst[..lo].fill(T::zero());
            dst[hi.max(lo)..].fill(T::zero());
            for (i, d) in dst[lo..hi].iter_mut().enumerate() {
                *d = row[p0 + i * spec.stride];
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], spec: &ConvSpec, len: usize, out_len: usize, gx: &mut [T]) {
    let k = spec.kernel;
    for ci in 0..spec.in_channels {
        let row = &mut gx[ci * len..(ci + 1) * len];
        for j in 0..k {
            let src = &col[(ci * k + j) * out_len..(ci * k + j + 1) * out_len];
            let (lo, hi, p0) = spec.tap_range(j, len, out_len);
            for (i, &g) in src[lo..hi].iter().enumerate() {
                row[p0 + i * spec.stride] += g;
            }
        }
    }
}

/// Direct 1D convolution (cross-correlation) with zero padding.
///
/// Input is `[batch, C_in, L_in]`, output `[batch, C_out, L_out]`.
pub fn conv1d_forward<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>, TensorError> {
    let Checked {
        batch,
        len,
        out_len,
    } = check(input, spec, weight, bias)?;
    let (c_in, c_out, k) = (spec.in_channels, spec.out_channels, spec.kernel);
    let mut out = vec![T::zero(); batch * c_out * out_len];
    let w = weight.data();

    match spec.mode {
        ConvMode::Depthwise => {
            for b in 0..batch {
                for c in 0..c_in {
                    let x = &input.data()[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                    let y = &mut out[(b * c_out + c) * out_len..(b * c_out + c + 1) * out_len];
                    let taps = &w[c * k..(c + 1) * k];
                    for (j, &wj) in taps.iter().enumerate() {
                        let (lo, hi, p0) = spec.tap_range(j, len, out_len);
                        if spec.stride == 1 {
                            for (yt, &xp) in y[lo..hi].iter_mut().zip(&x[p0..p0 + hi - lo]) {
                                *yt += wj * xp;
                            }
                        } else {
                            for (i, yt) in y[lo..hi].iter_mut().enumerate() {
                                *yt += wj * x[p0 + i * spec.stride];
                            }
                        }
                    }
                }
            }
        }
        ConvMode::Standard | ConvMode::Pointwise => {
            let rows = c_in * k;
            let mut col = if spec.is_plain_pointwise() {
                Vec::new()
            } else {
                vec![T::zero(); rows * out_len]
            };
            for b in 0..batch {
                let x = &input.data()[b * c_in * len..(b + 1) * c_in * len];
                let y = &mut out[b * c_out * out_len..(b + 1) * c_out * out_len];
                let cols: &[T] = if spec.is_plain_pointwise() {
                    x
                } else {
                    im2col(x, spec, len, out_len, &mut col);
                    &col
                };
                T::gemm(c_out, rows, out_len, w, false, cols, false, T::zero(), y);
            }
        }
    }

    if let Some(bias) = bias {
        for b in 0..batch {
            for (c, &bc) in bias.data().iter().enumerate() {
                for v in &mut out[(b * c_out + c) * out_len..(b * c_out + c + 1) * out_len] {
                    *v += bc;
                }
            }
        }
    }
    Tensor::new(vec![batch, c_out, out_len], out)
}

/// Analytic gradients of [`conv1d_forward`] given the retained forward state.
pub fn conv1d_backward<T: Real>(
    record: &ConvRecord<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>, TensorError> {
    let (input, weight) = match (&record.input, &record.weight) {
        (Some(i), Some(w)) => (i, w),
        _ => return Err(TensorError::MissingForwardState { op: "conv1d" }),
    };
    conv1d_grads(input, &record.spec, weight, record.has_bias, upstream)
}

pub(crate) fn conv1d_grads<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    has_bias: bool,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>, TensorError> {
    let Checked {
        batch,
        len,
        out_len,
    } = check(input, spec, weight, None)?;
    let (c_in, c_out, k) = (spec.in_channels, spec.out_channels, spec.kernel);
    let expected = [batch, c_out, out_len];
    if upstream.shape() != expected {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d backward",
            what: "upstream gradient".into(),
            expected: expected.to_vec(),
            actual: upstream.shape().to_vec(),
        });
    }
    let g = upstream.data();
    let w = weight.data();
    let mut gx = vec![T::zero(); input.len()];
    let mut gw = vec![T::zero(); weight.len()];

    match spec.mode {
        ConvMode::Depthwise => {
            for c in 0..c_in {
                let taps = &w[c * k..(c + 1) * k];
                for b in 0..batch {
                    let base = (b * c_in + c) * len;
                    let x = &input.data()[base..base + len];
                    let gy = &g[(b * c_out + c) * out_len..(b * c_out + c + 1) * out_len];
                    let gxr = &mut gx[base..base + len];
                    for j in 0..k {
                        let (lo, hi, p0) = spec.tap_range(j, len, out_len);
                        let gy = &gy[lo..hi];
                        let acc: f64 = if spec.stride == 1 {
                            let xs = &x[p0..p0 + gy.len()];
                            for (g, &gt) in gxr[p0..p0 + gy.len()].iter_mut().zip(gy) {
                                *g += gt * taps[j];
                            }
                            gy.iter().zip(xs).map(|(&a, &b)| (a * b).to_f64_lossy()).sum()
                        } else {
                            let mut acc = 0.0;
                            for (i, &gt) in gy.iter().enumerate() {
                                let p = p0 + i * spec.stride;
                                acc += (gt * x[p]).to_f64_lossy();
                                gxr[p] += gt * taps[j];
                            }
                            acc
                        };
                        gw[c * k + j] += T::from_f64_lossy(acc);
                    }
                }
            }
        }
        ConvMode::Standard | ConvMode::Pointwise => {
            let rows = c_in * k;
            let plain = spec.is_plain_pointwise();
            let mut col = if plain {
                Vec::new()
            } else {
                vec![T::zero(); rows * out_len]
            };
            let mut gcol = vec![T::zero(); rows * out_len];
            for b in 0..batch {
                let x = &input.data()[b * c_in * len..(b + 1) * c_in * len];
                let gy = &g[b * c_out * out_len..(b + 1) * c_out * out_len];
                let cols: &[T] = if plain {
                    x
                } else {
                    im2col(x, spec, len, out_len, &mut col);
                    &col
                };
                T::gemm(c_out, out_len, rows, gy, false, cols, true, T::one(), &mut gw);
                let gxb = &mut gx[b * c_in * len..(b + 1) * c_in * len];
                if plain {
                    T::gemm(rows, c_out, out_len, w, true, gy, false, T::zero(), gxb);
                } else {
                    T::gemm(rows, c_out, out_len, w, true, gy, false, T::zero(), &mut gcol);
                    col2im(&gcol, spec, len, out_len, gxb);
                }
            }
        }
    }

    let bias = has_bias.then(|| {
        let sums: Vec<T> = (0..c_out)
            .map(|c| {
                let mut acc = 0.0f64;
                for b in 0..batch {
                    for &v in &g[(b * c_out + c) * out_len..(b * c_out + c + 1) * out_len] {
                        acc += v.to_f64_lossy();
                    }
                }
                T::from_f64_lossy(acc)
            })
            .collect();
        Tensor::new(vec![c_out], sums).expect("bias gradient shape")
    });

    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias,
    })
}
