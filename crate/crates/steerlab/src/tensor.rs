//! Dense f32 kernels for the transformer forward pass and steering arithmetic.
//!
//! Everything is row-major, single-threaded, and pure. The kernels here are
//! deliberately plain loops so they can be checked one-to-one against naive
//! reference implementations in the tests.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: left {left:?} vs right {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("vector has (near-)zero L2 norm; cannot normalize")]
    ZeroVector,
    #[error("head dimension {0} is odd; rotary rotation needs pairs")]
    OddHeadDim(usize),
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
}

/// Dense row-major f32 array. `data.len()` always equals the product of
/// `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Number of rows when viewed as a 2-D matrix (shape `[rows, cols]`).
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() needs a 2-D tensor");
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() needs a 2-D tensor");
        self.shape[1]
    }

    /// Borrow row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `c = a · b` for 2-D tensors `a: [m, k]`, `b: [k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(TensorError::ShapeMismatch {
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (t, &a_it) in a_row.iter().enumerate() {
            let b_row = &b.data[t * n..(t + 1) * n];
            for j in 0..n {
                o_row[j] += a_it * b_row[j];
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `y = x · w` where `x: [k]` and `w: [k, n]`; the single-row matmul the
/// runtime uses for every projection.
pub fn vec_mat(x: &[f32], w: &Tensor) -> Result<Vec<f32>, TensorError> {
    if w.shape.len() != 2 || w.shape[0] != x.len() {
        return Err(TensorError::ShapeMismatch {
            left: vec![1, x.len()],
            right: w.shape.clone(),
        });
    }
    let n = w.shape[1];
    let mut out = vec![0.0f32; n];
    for (t, &x_t) in x.iter().enumerate() {
        let w_row = &w.data[t * n..(t + 1) * n];
        for j in 0..n {
            out[j] += x_t * w_row[j];
        }
    }
    Ok(out)
}

/// Row-wise softmax of a 2-D tensor, max-subtracted for stability. Each output
/// row is nonnegative and sums to 1.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    assert_eq!(x.shape.len(), 2, "softmax_rows needs a 2-D tensor");
    let mut out = x.clone();
    let n = x.shape[1];
    for r in 0..x.shape[0] {
        softmax_in_place(&mut out.data[r * n..(r + 1) * n]);
    }
    out
}

/// In-place stable softmax over one slice.
pub fn softmax_in_place(row: &mut [f32]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// RMS normalization: `y[i] = x[i] / sqrt(mean(x^2) + eps) * gain[i]`.
pub fn rms_norm(x: &[f32], gain: &[f32], eps: f32) -> Vec<f32> {
    assert_eq!(x.len(), gain.len(), "rms_norm gain length");
    let ms = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let inv = 1.0 / (ms + eps).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
}

/// Mean/variance normalization with gain and bias. Population variance; a
/// zero-variance input normalizes to zeros, so the output is just the bias.
pub fn layer_norm(x: &[f32], gain: &[f32], bias: &[f32], eps: f32) -> Vec<f32> {
    assert_eq!(x.len(), gain.len(), "layer_norm gain length");
    assert_eq!(x.len(), bias.len(), "layer_norm bias length");
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

/// Norm below which a vector is considered degenerate for normalization.
pub const ZERO_NORM_EPS: f64 = 1e-12;

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

/// `v / ||v||_2`. Errors with [`TensorError::ZeroVector`] when the norm is
/// below [`ZERO_NORM_EPS`], which signals a degenerate steering direction.
pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>, TensorError> {
    let norm = l2_norm(v);
    if norm < ZERO_NORM_EPS {
        return Err(TensorError::ZeroVector);
    }
    let inv = (1.0 / norm) as f32;
    Ok(v.iter().map(|x| x * inv).collect())
}

/// `h + c * v` elementwise. With `c = 0` the result is bitwise equal to `h`.
pub fn add_scaled(h: &[f32], v: &[f32], c: f32) -> Result<Vec<f32>, TensorError> {
    if h.len() != v.len() {
        return Err(TensorError::DimMismatch {
            left: h.len(),
            right: v.len(),
        });
    }
    Ok(h.iter().zip(v).map(|(a, b)| a + c * b).collect())
}

/// In-place variant of [`add_scaled`]; the hook path uses this to avoid an
/// allocation per layer per token.
pub fn add_scaled_in_place(h: &mut [f32], v: &[f32], c: f32) {
    assert_eq!(h.len(), v.len(), "add_scaled dimension");
    for (a, b) in h.iter_mut().zip(v) {
        *a += c * b;
    }
}

/// Rotary position rotation over the last dimension, which must be even.
/// Adjacent value pairs `(x[2i], x[2i+1])` rotate by `pos * theta_base^(-2i/d)`;
/// position 0 is the identity.
pub fn rope_rotate(x: &Tensor, position: usize, theta_base: f32) -> Result<Tensor, TensorError> {
    let head_dim = *x
        .shape
        .last()
        .ok_or(TensorError::OddHeadDim(0))?;
    if head_dim % 2 != 0 || head_dim == 0 {
        return Err(TensorError::OddHeadDim(head_dim));
    }
    let mut out = x.clone();
    for chunk in out.data.chunks_exact_mut(head_dim) {
        rope_rotate_in_place(chunk, position, theta_base);
    }
    Ok(out)
}

/// The slice-level rotation [`rope_rotate`] is built on. `x.len()` must be even.
pub fn rope_rotate_in_place(x: &mut [f32], position: usize, theta_base: f32) {
    let d = x.len();
    debug_assert!(d.is_multiple_of(2));
    for i in (0..d).step_by(2) {
        let freq = theta_base.powf(-(i as f32) / d as f32);
        let angle = position as f32 * freq;
        let (sin, cos) = angle.sin_cos();
        let (a, b) = (x[i], x[i + 1]);
        x[i] = a * cos - b * sin;
        x[i + 1] = a * sin + b * cos;
    }
}

/// SiLU activation `x * sigmoid(x)`.
pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// Gaussian error linear unit, tanh approximation.
pub fn gelu(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}
