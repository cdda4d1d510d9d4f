#![allow(dead_code)]

use m3d_core::numerics::{RngState, Tensor};

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central difference of `f` at coordinate `i` of `x` with step `h`.
pub fn central_diff(x: &Tensor, i: usize, h: f64, f: &mut impl FnMut(&Tensor) -> f64) -> f64 {
    let mut xp = x.clone();
    xp.data_mut()[i] += h;
    let mut xm = x.clone();
    xm.data_mut()[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Central difference that refuses points where a ReLU switches inside the
/// stencil: there the one-sided slopes disagree, or halving the step changes
/// the estimate.
pub fn smooth_diff(x: &Tensor, i: usize, h: f64, f: &mut impl FnMut(&Tensor) -> f64) -> Option<f64> {
    let mut at = |d: f64| {
        let mut xd = x.clone();
        xd.data_mut()[i] += d;
        f(&xd)
    };
    let (fm, f0, fp) = (at(-h), at(0.0), at(h));
    let (left, right) = ((f0 - fm) / h, (fp - f0) / h);
    if rel_err(left, right, 1e-6) > 1e-3 {
        return None;
    }
    let a = (fp - fm) / (2.0 * h);
    let b = central_diff(x, i, h / 2.0, f);
    (rel_err(a, b, 1e-6) < 1e-6).then_some(b)
}

pub fn gaussian(seed: u64, shape: &[usize], std: f64) -> Tensor {
    RngState::new(seed).gaussian(shape.to_vec(), 0.0, std).unwrap()
}

pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}
