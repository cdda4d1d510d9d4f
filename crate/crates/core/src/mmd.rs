//! Distribution distances between real and synthetic representation batches.
//!
//! * [`dm_loss`]: squared distance between empirical means (first moment only).
//! * [`mmd2_biased`]: the V-statistic `K_TT + K_SS - 2 K_TS`, with each term
//!   the mean over a full Gram matrix. This is the condensation loss.
//! * [`mmd2_unbiased`]: U-statistic variant (self-pairs removed), used for
//!   convergence diagnostics only.
//! * [`moment_distance`]: per-dimension mean / variance / skewness gaps.

use crate::error::{Error, Result};
use crate::kernels::{gram, gram_self, GramMatrix, KernelSpec};
use crate::numerics::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Real,
    Synthetic,
}

/// Encoder outputs for one class, `n × p`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepBatch {
    reps: Tensor,
    source: Source,
}

impl RepBatch {
    pub fn new(reps: Tensor, source: Source) -> Result<Self> {
        let (n, _) = reps.dims2()?;
        if n == 0 {
            return Err(Error::BatchTooSmall("representation batch is empty".into()));
        }
        reps.ensure_finite("representation batch")?;
        Ok(RepBatch { reps, source })
    }

    pub fn real(reps: Tensor) -> Result<Self> {
        Self::new(reps, Source::Real)
    }

    pub fn synthetic(reps: Tensor) -> Result<Self> {
        Self::new(reps, Source::Synthetic)
    }

    pub fn reps(&self) -> &Tensor {
        &self.reps
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn len(&self) -> usize {
        self.reps.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.reps.shape()[1]
    }
}

fn same_dim(a: &RepBatch, b: &RepBatch) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "representation dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `|mean(real) - mean(syn)|^2`.
pub fn dm_loss(real: &RepBatch, syn: &RepBatch) -> Result<f64> {
    same_dim(real, syn)?;
    let mr = real.reps.column_means()?;
    let ms = syn.reps.column_means()?;
    Ok(mr.iter().zip(&ms).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Gradient of [`dm_loss`] w.r.t. the synthetic rows: every row receives
/// `2 (mean(syn) - mean(real)) / m`.
pub fn dm_grad_syn(real: &RepBatch, syn: &RepBatch) -> Result<Tensor> {
    same_dim(real, syn)?;
    let mr = real.reps.column_means()?;
    let ms = syn.reps.column_means()?;
    let m = syn.len();
    let row: Vec<f64> = ms
        .iter()
        .zip(&mr)
        .map(|(s, r)| 2.0 * (s - r) / m as f64)
        .collect();
    let data = row.iter().copied().cycle().take(m * row.len()).collect();
    Tensor::new([m, row.len()], data)
}

/// Mean of a cross Gram matrix whose value does not depend on which
/// argument came first: the entries are summed in sorted order.
fn cross_mean(g: &GramMatrix) -> f64 {
    let mut v = g.values().data().to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Biased (V-statistic) squared MMD.
pub fn mmd2_biased(spec: &KernelSpec, real: &RepBatch, syn: &RepBatch) -> Result<f64> {
    same_dim(real, syn)?;
    let ktt = gram_self(spec, &real.reps)?.mean();
    let kss = gram_self(spec, &syn.reps)?.mean();
    let kts = cross_mean(&gram(spec, &real.reps, &syn.reps)?);
    Ok(ktt + kss - 2.0 * kts)
}

/// Unbiased (U-statistic) squared MMD. May be negative.
pub fn mmd2_unbiased(spec: &KernelSpec, real: &RepBatch, syn: &RepBatch) -> Result<f64> {
    same_dim(real, syn)?;
    if real.len() < 2 || syn.len() < 2 {
        return Err(Error::BatchTooSmall(
            "unbiased MMD needs at least two points per batch".into(),
        ));
    }
    let ktt = gram_self(spec, &real.reps)?.off_diagonal_mean();
    let kss = gram_self(spec, &syn.reps)?.off_diagonal_mean();
    let kts = cross_mean(&gram(spec, &real.reps, &syn.reps)?);
    Ok(ktt + kss - 2.0 * kts)
}

/// Gradient of [`mmd2_biased`] w.r.t. the synthetic representations.
///
/// For the linear kernel the closed form `2 (mean(syn) - mean(real)) / m`
/// is used, which is the same arithmetic as [`dm_grad_syn`].
pub fn mmd2_grad_syn(spec: &KernelSpec, real: &RepBatch, syn: &RepBatch) -> Result<Tensor> {
    same_dim(real, syn)?;
    spec.validate()?;
    if *spec == KernelSpec::Linear {
        return dm_grad_syn(real, syn);
    }
    let n = real.len();
    let m = syn.len();
    let p = syn.dim();
    let s = &syn.reps;
    let t = &real.reps;

    // dK(x, s_j)/ds_j = alpha * x + beta * s_j
    let mut alpha_ss = vec![0.0; m * m];
    let mut beta_ss = vec![0.0; m];
    for a in 0..m {
        let sa = s.item(a);
        for j in 0..m {
            let sj = s.item(j);
            let k = spec.eval(sa, sj);
            let (al, be) = spec.grad_second_coeffs(sa, sj, k);
            alpha_ss[a * m + j] = al;
            beta_ss[j] += be;
        }
    }
    let mut alpha_ts = vec![0.0; n * m];
    let mut beta_ts = vec![0.0; m];
    for i in 0..n {
        let ti = t.item(i);
        for j in 0..m {
            let sj = s.item(j);
            let k = spec.eval(ti, sj);
            let (al, be) = spec.grad_second_coeffs(ti, sj, k);
            alpha_ts[i * m + j] = al;
            beta_ts[j] += be;
        }
    }

    let c_ss = 2.0 / (m * m) as f64;
    let c_ts = 2.0 / (n * m) as f64;
    let mut grad = vec![0.0; m * p];
    // grad = c_ss * alpha_ssᵀ S - c_ts * alpha_tsᵀ T + diag(...) S
    gemm(m, m, p, c_ss, &alpha_ss, true, s.data(), false, 0.0, &mut grad);
    gemm(m, n, p, -c_ts, &alpha_ts, true, t.data(), false, 1.0, &mut grad);
    for j in 0..m {
        let w = c_ss * beta_ss[j] - c_ts * beta_ts[j];
        if w != 0.0 {
            for (g, &v) in grad[j * p..(j + 1) * p].iter_mut().zip(s.item(j)) {
                *g += w * v;
            }
        }
    }
    Tensor::new([m, p], grad)
}

/// Per-dimension population mean, variance and skewness of a batch.
///
/// Dimensions with zero variance get skewness 0.
pub fn central_moments(reps: &Tensor) -> Result<[Vec<f64>; 3]> {
    let (n, p) = reps.dims2()?;
    let mean = reps.column_means()?;
    let mut m2 = vec![0.0; p];
    let mut m3 = vec![0.0; p];
    for i in 0..n {
        for (k, &v) in reps.item(i).iter().enumerate() {
            let d = v - mean[k];
            m2[k] += d * d;
            m3[k] += d * d * d;
        }
    }
    let inv = 1.0 / n as f64;
    let var: Vec<f64> = m2.iter().map(|v| v * inv).collect();
    let skew = m3
        .iter()
        .zip(&var)
        .map(|(&c3, &v)| if v > 0.0 { c3 * inv / v.powf(1.5) } else { 0.0 })
        .collect();
    Ok([mean, var, skew])
}

/// Euclidean distance between the order-`order` moment vectors (1 = mean,
/// 2 = variance, 3 = skewness).
pub fn moment_distance(real: &RepBatch, syn: &RepBatch, order: usize) -> Result<f64> {
    same_dim(real, syn)?;
    if !(1..=3).contains(&order) {
        return Err(Error::invalid(format!("moment order must be 1, 2 or 3, got {order}")));
    }
    if order >= 2 && (real.len() < 2 || syn.len() < 2) {
        return Err(Error::BatchTooSmall(format!(
            "order-{order} moments need at least two points per batch"
        )));
    }
    let a = &central_moments(&real.reps)?[order - 1];
    let b = &central_moments(&syn.reps)?[order - 1];
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// First/second/third-order moment distances.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentReport {
    pub first: f64,
    pub second: f64,
    pub third: f64,
}

impl MomentReport {
    pub fn compute(real: &RepBatch, syn: &RepBatch) -> Result<Self> {
        same_dim(real, syn)?;
        if real.len() < 2 || syn.len() < 2 {
            return Err(Error::BatchTooSmall(
                "moment report needs at least two points per batch".into(),
            ));
        }
        let [ma, va, sa] = central_moments(&real.reps)?;
        let [mb, vb, sb] = central_moments(&syn.reps)?;
        let dist = |x: &[f64], y: &[f64]| {
            x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        Ok(MomentReport {
            first: dist(&ma, &mb),
            second: dist(&va, &vb),
            third: dist(&sa, &sb),
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.first, self.second, self.third]
    }

    /// Component-wise mean of several reports.
    pub fn average<'a>(reports: impl IntoIterator<Item = &'a MomentReport>) -> MomentReport {
        let mut acc = [0.0; 3];
        let mut count = 0usize;
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.as_array()) {
                *a += v;
            }
            count += 1;
        }
        let k = count.max(1) as f64;
        MomentReport {
            first: acc[0] / k,
            second: acc[1] / k,
            third: acc[2] / k,
        }
    }
}
