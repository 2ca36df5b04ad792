//! Minimal dense-tensor kernels: 32-bit storage, 64-bit accumulation,
//! fixed sequential reduction order so identical inputs produce bit-identical
//! outputs on every run and at every thread count.

use crate::error::{Result, SrtError};

/// Dense n-dimensional array of f32 in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking the shape/data contract and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(SrtError::Dimension(format!("zero-sized axis in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(SrtError::Dimension(format!(
                "shape {shape:?} wants {n} elements, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SrtError::NonFinite("tensor construction"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Reinterprets the buffer under a new shape of equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(SrtError::Dimension(format!(
                "cannot reshape {:?} ({} elems) to {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    /// Matrix product c[i,j] = sum_k a[i,k] b[k,j]; both operands rank 2.
    /// Accumulates in f64 and rounds once at the end of each dot product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (p, q) = as_matrix(self)?;
        let (q2, r) = as_matrix(other)?;
        if q != q2 {
            return Err(SrtError::Dimension(format!(
                "matmul inner dims differ: {}x{} vs {}x{}",
                p, q, q2, r
            )));
        }
        let mut out = vec![0.0f32; p * r];
        for i in 0..p {
            let a_row = &self.data[i * q..(i + 1) * q];
            for j in 0..r {
                let mut acc = 0.0f64;
                for k in 0..q {
                    acc += a_row[k] as f64 * other.data[k * r + j] as f64;
                }
                out[i * r + j] = acc as f32;
            }
        }
        Tensor::new(vec![p, r], out)
    }

    /// Affine map of each row: y = x Wᵀ + b, with W stored [out, in].
    /// This is the layout weight containers use, so no transpose is
    /// materialized on the hot path.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (rows, inp) = as_matrix(self)?;
        let (out_dim, inp2) = as_matrix(weight)?;
        if inp != inp2 {
            return Err(SrtError::Dimension(format!(
                "linear: input dim {inp} vs weight in-dim {inp2}"
            )));
        }
        if let Some(b) = bias {
            if b.shape != [out_dim] {
                return Err(SrtError::Dimension(format!(
                    "linear: bias shape {:?} vs out dim {out_dim}",
                    b.shape
                )));
            }
        }
        let mut out = vec![0.0f32; rows * out_dim];
        for i in 0..rows {
            let x = &self.data[i * inp..(i + 1) * inp];
            for o in 0..out_dim {
                let w = &weight.data[o * inp..(o + 1) * inp];
                let mut acc = match bias {
                    Some(b) => b.data[o] as f64,
                    None => 0.0,
                };
                for k in 0..inp {
                    acc += x[k] as f64 * w[k] as f64;
                }
                out[i * out_dim + o] = acc as f32;
            }
        }
        Tensor::new(vec![rows, out_dim], out)
    }

    /// Per-vector normalization over the last axis followed by affine
    /// gamma/beta. A zero-variance vector maps to beta via the eps guard.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
        let c = *self.shape.last().ok_or_else(|| {
            SrtError::Dimension("layer_norm on rank-0 tensor".into())
        })?;
        if gamma.shape != [c] || beta.shape != [c] {
            return Err(SrtError::Dimension(format!(
                "layer_norm: gamma {:?} / beta {:?} vs channels {c}",
                gamma.shape, beta.shape
            )));
        }
        if eps <= 0.0 {
            return Err(SrtError::Config("layer_norm eps must be > 0".into()));
        }
        let mut out = vec![0.0f32; self.data.len()];
        for (row_out, row) in out.chunks_mut(c).zip(self.data.chunks(c)) {
            let mut mean = 0.0f64;
            for &v in row {
                mean += v as f64;
            }
            mean /= c as f64;
            let mut var = 0.0f64;
            for &v in row {
                let d = v as f64 - mean;
                var += d * d;
            }
            var /= c as f64;
            let inv_std = 1.0 / (var + eps as f64).sqrt();
            for k in 0..c {
                let n = (row[k] as f64 - mean) * inv_std;
                row_out[k] = (n * gamma.data[k] as f64 + beta.data[k] as f64) as f32;
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// Softmax along the given axis with max-subtraction for stability.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(SrtError::Dimension(format!(
                "softmax axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let axis_len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = vec![0.0f32; self.data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for a in 0..axis_len {
                    max = max.max(self.data[base + a * inner] as f64);
                }
                let mut sum = 0.0f64;
                let mut exps = vec![0.0f64; axis_len];
                for a in 0..axis_len {
                    let e = (self.data[base + a * inner] as f64 - max).exp();
                    exps[a] = e;
                    sum += e;
                }
                for a in 0..axis_len {
                    out[base + a * inner] = (exps[a] / sum) as f32;
                }
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// Exact Gaussian-CDF GELU: x * Phi(x).
    pub fn gelu(&self) -> Result<Tensor> {
        let out: Vec<f32> = self.data.iter().map(|&x| gelu_scalar(x)).collect();
        Tensor::new(self.shape.clone(), out)
    }

    /// Elementwise sum of same-shape tensors.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(SrtError::Dimension(format!(
                "add: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let out: Vec<f32> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor::new(self.shape.clone(), out)
    }

    /// Identity matrix of side n.
    pub fn identity(n: usize) -> Tensor {
        let mut data = vec![0.0f32; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor { shape: vec![n, n], data }
    }
}

fn as_matrix(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape[..] {
        [r, c] => Ok((r, c)),
        _ => Err(SrtError::Dimension(format!(
            "expected rank-2 tensor, got shape {:?}",
            t.shape
        ))),
    }
}

/// x * Phi(x) computed through a double-precision erf.
pub fn gelu_scalar(x: f32) -> f32 {
    let xd = x as f64;
    (xd * 0.5 * (1.0 + erf(xd * std::f64::consts::FRAC_1_SQRT_2))) as f32
}

/// Double-precision error function.
///
/// Maclaurin series for |x| < 2.5, Lentz continued fraction for the
/// complementary function beyond. Both branches are plain arithmetic with a
/// fixed iteration structure, so results are identical on every run.
pub fn erf(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 2.5 {
        // erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1))
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 1.0f64;
        loop {
            term *= -x2 / n;
            let contrib = term / (2.0 * n + 1.0);
            sum += contrib;
            if contrib.abs() < 1e-18 * sum.abs().max(1e-300) || n > 80.0 {
                break;
            }
            n += 1.0;
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    } else if ax > 6.5 {
        // erfc underflows past f64 noise at this point.
        if x > 0.0 { 1.0 } else { -1.0 }
    } else {
        // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + (2/2)/(x + (3/2)/(x + ...))))
        // evaluated bottom-up with a fixed depth.
        let mut cf = 0.0f64;
        for k in (1..=60).rev() {
            cf = (k as f64 / 2.0) / (ax + cf);
        }
        let erfc = (-ax * ax).exp() / std::f64::consts::PI.sqrt() / (ax + cf);
        let e = 1.0 - erfc;
        if x > 0.0 { e } else { -e }
    }
}
