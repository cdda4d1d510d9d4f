//! Positive-definite kernels, Gram matrices and bandwidth selection.
//!
//! The mean embeddings of the real and synthetic representation
//! distributions are never formed explicitly. Every quantity the losses need
//! is a mean over a Gram matrix, so this module only has to evaluate the
//! kernel, its derivative in the second argument, and pick a bandwidth.

use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Points beyond this count are subsampled (evenly strided) before the
/// median pairwise distance is taken.
pub const MEDIAN_SUBSAMPLE: usize = 1000;

/// A fully resolved kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `exp(-lambda * |a - b|^2)`
    Gaussian { lambda: f64 },
    /// `a . b`
    Linear,
    /// `(a . b + c)^d`
    Polynomial { c: f64, d: u32 },
}

impl KernelSpec {
    pub fn gaussian(lambda: f64) -> Result<Self> {
        let k = KernelSpec::Gaussian { lambda };
        k.validate()?;
        Ok(k)
    }

    pub fn polynomial(c: f64, d: u32) -> Result<Self> {
        let k = KernelSpec::Polynomial { c, d };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { lambda } if !(lambda > 0.0 && lambda.is_finite()) => Err(
                Error::invalid(format!("gaussian bandwidth must be positive, got {lambda}")),
            ),
            KernelSpec::Polynomial { c, d } if !(c >= 0.0 && c.is_finite()) || d == 0 => Err(
                Error::invalid(format!("polynomial kernel needs c >= 0 and d >= 1, got c={c} d={d}")),
            ),
            _ => Ok(()),
        }
    }

    /// Kernel value on two equally long slices. Lengths are not checked.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { lambda } => (-lambda * sq_dist(a, b)).exp(),
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Polynomial { c, d } => (dot(a, b) + c).powi(d as i32),
        }
    }

    /// Coefficients `(alpha, beta)` with `dK(a, b)/db = alpha * a + beta * b`.
    ///
    /// `k_ab` must be `self.eval(a, b)`; it is passed in so callers that
    /// already hold a Gram matrix do not evaluate the kernel twice.
    #[inline]
    pub fn grad_second_coeffs(&self, a: &[f64], b: &[f64], k_ab: f64) -> (f64, f64) {
        match *self {
            KernelSpec::Gaussian { lambda } => {
                let s = 2.0 * lambda * k_ab;
                (s, -s)
            }
            KernelSpec::Linear => (1.0, 0.0),
            KernelSpec::Polynomial { c, d } => {
                let base = dot(a, b) + c;
                (f64::from(d) * base.powi(d as i32 - 1), 0.0)
            }
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Gaussian { lambda } => write!(f, "gaussian(lambda={lambda})"),
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial { c, d } => write!(f, "polynomial(c={c},d={d})"),
        }
    }
}

/// How the gaussian bandwidth is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Inverse median pairwise squared distance of the current real batch.
    Median,
}

/// Kernel as configured by a user, before the bandwidth is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelChoice {
    Gaussian(Bandwidth),
    Linear,
    Polynomial { c: f64, d: u32 },
}

impl Default for KernelChoice {
    fn default() -> Self {
        KernelChoice::Gaussian(Bandwidth::Median)
    }
}

impl KernelChoice {
    /// Polynomial with the default `c = 1, d = 2`.
    pub fn polynomial_default() -> Self {
        KernelChoice::Polynomial { c: 1.0, d: 2 }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, KernelChoice::Linear)
    }

    /// Resolves to a concrete kernel; `reference` is the real representation
    /// batch used by the median heuristic.
    pub fn resolve(&self, reference: &Tensor) -> Result<KernelSpec> {
        match *self {
            KernelChoice::Gaussian(Bandwidth::Fixed(lambda)) => KernelSpec::gaussian(lambda),
            KernelChoice::Gaussian(Bandwidth::Median) => {
                KernelSpec::gaussian(median_bandwidth_single(reference)?)
            }
            KernelChoice::Linear => Ok(KernelSpec::Linear),
            KernelChoice::Polynomial { c, d } => KernelSpec::polynomial(c, d),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelChoice::Gaussian(_) => "gaussian",
            KernelChoice::Linear => "linear",
            KernelChoice::Polynomial { .. } => "polynomial",
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "kernel arguments have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    spec.validate()?;
    check_len(a, b)?;
    Ok(spec.eval(a, b))
}

/// `dK(a, b)/db`.
pub fn kernel_grad_second(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    check_len(a, b)?;
    let (alpha, beta) = spec.grad_second_coeffs(a, b, spec.eval(a, b));
    Ok(a.iter().zip(b).map(|(x, y)| alpha * x + beta * y).collect())
}

/// Kernel evaluations between two point sets; `values[i][j] = K(a_i, b_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: Tensor,
}

impl GramMatrix {
    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let cols = self.values.shape()[1];
        self.values.data()[i * cols + j]
    }

    /// Mean over all entries (the `K_hat` term of the biased estimator).
    pub fn mean(&self) -> f64 {
        let n = self.values.len() as f64;
        self.values.data().iter().sum::<f64>() / n
    }

    /// Mean over off-diagonal entries of a square matrix.
    pub fn off_diagonal_mean(&self) -> f64 {
        let n = self.values.shape()[0];
        let total: f64 = self.values.data().iter().sum();
        let diag: f64 = (0..n).map(|i| self.get(i, i)).sum();
        (total - diag) / (n * (n - 1)) as f64
    }
}

fn feature_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    let (n, p) = a.dims2()?;
    let (m, q) = b.dims2()?;
    if p != q {
        return Err(Error::shape(format!(
            "point sets have feature dimensions {p} and {q}"
        )));
    }
    Ok((n, m, p))
}

pub fn gram(spec: &KernelSpec, a: &Tensor, b: &Tensor) -> Result<GramMatrix> {
    spec.validate()?;
    let (n, m, _) = feature_dims(a, b)?;
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let ai = a.item(i);
        out.extend((0..m).map(|j| spec.eval(ai, b.item(j))));
    }
    let values = Tensor::new([n, m], out)?;
    Ok(GramMatrix { values })
}

/// Gram matrix of a set with itself; only the upper triangle is evaluated,
/// so the result is exactly symmetric.
pub fn gram_self(spec: &KernelSpec, a: &Tensor) -> Result<GramMatrix> {
    spec.validate()?;
    let (n, _) = a.dims2()?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let ai = a.item(i);
        for j in i..n {
            let v = spec.eval(ai, a.item(j));
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    let values = Tensor::new([n, n], out)?;
    Ok(GramMatrix { values })
}

/// Median heuristic on the pooled rows of `a` and `b`: `1 / median |x - y|^2`.
pub fn median_bandwidth(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (n, m, _) = feature_dims(a, b)?;
    let rows: Vec<&[f64]> = (0..n).map(|i| a.item(i)).chain((0..m).map(|j| b.item(j))).collect();
    median_bandwidth_rows(&rows)
}

/// Median heuristic on a single point set.
pub fn median_bandwidth_single(a: &Tensor) -> Result<f64> {
    let (n, _) = a.dims2()?;
    let rows: Vec<&[f64]> = (0..n).map(|i| a.item(i)).collect();
    median_bandwidth_rows(&rows)
}

fn median_bandwidth_rows(rows: &[&[f64]]) -> Result<f64> {
    let total = rows.len();
    if total < 2 {
        return Err(Error::BatchTooSmall(
            "median heuristic needs at least two points".into(),
        ));
    }
    let picked: Vec<&[f64]> = if total > MEDIAN_SUBSAMPLE {
        (0..MEDIAN_SUBSAMPLE)
            .map(|i| rows[i * total / MEDIAN_SUBSAMPLE])
            .collect()
    } else {
        rows.to_vec()
    };
    let k = picked.len();
    let mut dists = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            dists.push(sq_dist(picked[i], picked[j]));
        }
    }
    let median = median_in_place(&mut dists);
    if !(median > 0.0) || !median.is_finite() {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(1.0 / median)
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let len = v.len();
    let mid = len / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if len % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}
