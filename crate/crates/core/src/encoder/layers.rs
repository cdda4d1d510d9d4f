//! Forward and backward kernels for the individual layer types.
//!
//! All image tensors are `n × c × h × w`, row-major.

use crate::numerics::{gemm, Scalar};

pub(crate) const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvDims {
    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn k(&self) -> usize {
        self.cin * 9
    }
}

/// Horizontal source range for kernel column `kx`: output columns
/// `x0..x1` read input columns `x0+kx-1..x1+kx-1`.
fn span(kx: usize, w: usize) -> (usize, usize) {
    match kx {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w - 1),
    }
}

/// Fills `cols` (`cin*9 × h*w`) from one sample, 3×3 kernel, stride 1,
/// zero padding 1.
fn im2col<T: Scalar>(sample: &[T], d: &ConvDims, cols: &mut [T]) {
    let (h, w, hw) = (d.h, d.w, d.hw());
    for c in 0..d.cin {
        let plane = &sample[c * hw..][..hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(c * 9 + ky * 3 + kx) * hw..][..hw];
                let (x0, x1) = span(kx, w);
                for y in 0..h {
                    let out_row = &mut row[y * w..][..w];
                    let sy = y + ky;
                    if sy == 0 || sy > h {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(sy - 1) * w..][..w];
                    out_row[..x0].fill(T::zero());
                    out_row[x1..].fill(T::zero());
                    out_row[x0..x1].copy_from_slice(&src[x0 + kx - 1..x1 + kx - 1]);
                }
            }
        }
    }
}

/// Scatter-adds `cols` into one sample's input gradient (adjoint of
/// [`im2col`]).
fn col2im<T: Scalar>(cols: &[T], d: &ConvDims, grad_in: &mut [T]) {
    let (h, w, hw) = (d.h, d.w, d.hw());
    for c in 0..d.cin {
        let plane = &mut grad_in[c * hw..][..hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(c * 9 + ky * 3 + kx) * hw..][..hw];
                let (x0, x1) = span(kx, w);
                for y in 0..h {
                    let sy = y + ky;
                    if sy == 0 || sy > h {
                        continue;
                    }
                    let dst = &mut plane[(sy - 1) * w..][..w][x0 + kx - 1..x1 + kx - 1];
                    for (o, &v) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *o = *o + v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Scalar>(input: &[T], weight: &[T], bias: &[T], d: &ConvDims) -> Vec<T> {
    let (hw, k) = (d.hw(), d.k());
    let mut out = vec![T::zero(); d.n * d.cout * hw];
    let mut cols = vec![T::zero(); k * hw];
    for s in 0..d.n {
        im2col(&input[s * d.cin * hw..][..d.cin * hw], d, &mut cols);
        let dst = &mut out[s * d.cout * hw..][..d.cout * hw];
        gemm(d.cout, k, hw, T::one(), weight, false, &cols, false, T::zero(), dst);
        for (co, plane) in dst.chunks_exact_mut(hw).enumerate() {
            let b = bias[co];
            for v in plane {
                *v = *v + b;
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`; the parts not requested
/// come back empty.
pub(crate) fn conv_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    d: &ConvDims,
    want_input: bool,
    want_params: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (hw, k) = (d.hw(), d.k());
    let mut gin = if want_input { vec![T::zero(); d.n * d.cin * hw] } else { Vec::new() };
    let mut gw = if want_params { vec![T::zero(); d.cout * k] } else { Vec::new() };
    let mut gb = if want_params { vec![T::zero(); d.cout] } else { Vec::new() };
    let mut cols = vec![T::zero(); k * hw];
    for s in 0..d.n {
        let dy = &grad_out[s * d.cout * hw..][..d.cout * hw];
        if want_params {
            im2col(&input[s * d.cin * hw..][..d.cin * hw], d, &mut cols);
            gemm(d.cout, hw, k, T::one(), dy, false, &cols, true, T::one(), &mut gw);
            for (b, plane) in gb.iter_mut().zip(dy.chunks_exact(hw)) {
                *b = plane.iter().fold(*b, |a, &v| a + v);
            }
        }
        if want_input {
            gemm(k, d.cout, hw, T::one(), weight, true, dy, false, T::zero(), &mut cols);
            col2im(&cols, d, &mut gin[s * d.cin * hw..][..d.cin * hw]);
        }
    }
    (gin, gw, gb)
}

/// Sum with eight independent accumulators so the loop vectorizes.
fn lane_sum<T: Scalar>(xs: &[T], f: impl Fn(T) -> T) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a = *a + f(v);
        }
    }
    let mut total = tail.iter().fold(T::zero(), |a, &v| a + f(v));
    for a in acc {
        total = total + a;
    }
    total
}

fn lane_dot<T: Scalar>(xs: &[T], ys: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let cx = xs.chunks_exact(8);
    let cy = ys.chunks_exact(8);
    let mut total = cx.remainder().iter().zip(cy.remainder()).fold(T::zero(), |a, (&x, &y)| a + x * y);
    for (a, b) in cx.zip(cy) {
        for i in 0..8 {
            acc[i] = acc[i] + a[i] * b[i];
        }
    }
    for a in acc {
        total = total + a;
    }
    total
}

/// Instance normalization in place over each `h*w` plane; returns the
/// per-plane inverse standard deviations. `x` becomes the normalized map.
pub(crate) fn instance_norm_forward<T: Scalar>(x: &mut [T], planes: usize, hw: usize) -> Vec<T> {
    let eps = T::from_f64_lossy(NORM_EPS);
    let inv_n = T::from_f64_lossy(1.0 / hw as f64);
    let mut inv = Vec::with_capacity(planes);
    for p in 0..planes {
        let plane = &mut x[p * hw..][..hw];
        let mean = lane_sum(plane, |v| v) * inv_n;
        let var = lane_sum(plane, |v| (v - mean) * (v - mean)) * inv_n;
        let is = T::one() / (var + eps).sqrt();
        for v in plane.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv.push(is);
    }
    inv
}

/// Backward of instance normalization given the normalized output `xhat`.
pub(crate) fn instance_norm_backward<T: Scalar>(grad: &mut [T], xhat: &[T], inv_std: &[T], hw: usize) {
    let inv_n = T::from_f64_lossy(1.0 / hw as f64);
    for (p, &is) in inv_std.iter().enumerate() {
        let g = &mut grad[p * hw..][..hw];
        let xh = &xhat[p * hw..][..hw];
        let mg = lane_sum(g, |v| v) * inv_n;
        let mgx = lane_dot(g, xh) * inv_n;
        for (gv, &x) in g.iter_mut().zip(xh) {
            *gv = is * (*gv - mg - x * mgx);
        }
    }
}

/// ReLU followed by 2×2 average pooling, stride 2; a trailing odd
/// row/column is dropped.
pub(crate) fn relu_pool_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let r = |v: T| if v > T::zero() { v } else { T::zero() };
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        for y in 0..oh {
            let r0 = &src[2 * y * w..][..2 * ow];
            let r1 = &src[(2 * y + 1) * w..][..2 * ow];
            out.extend(
                r0.chunks_exact(2)
                    .zip(r1.chunks_exact(2))
                    .map(|(a, b)| (r(a[0]) + r(a[1]) + r(b[0]) + r(b[1])) * quarter),
            );
        }
    }
    out
}

/// Backward of [`relu_pool_forward`] given the pre-activation `pre`.
pub(crate) fn relu_pool_backward<T: Scalar>(g: &[T], pre: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &g[p * oh * ow..][..oh * ow];
        let pre = &pre[p * h * w..][..h * w];
        let dst = &mut out[p * h * w..][..h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let v = src[y * ow + xo] * quarter;
                for i in [2 * y * w + 2 * xo, (2 * y + 1) * w + 2 * xo] {
                    if pre[i] > T::zero() {
                        dst[i] = v;
                    }
                    if pre[i + 1] > T::zero() {
                        dst[i + 1] = v;
                    }
                }
            }
        }
    }
    out
}

/// `y = x Wᵀ + b` with `x: n×din`, `W: dout×din`.
pub(crate) fn linear_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], n: usize, din: usize, dout: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * dout);
    for _ in 0..n {
        y.extend_from_slice(bias);
    }
    gemm(n, din, dout, T::one(), x, false, weight, true, T::one(), &mut y);
    y
}

pub(crate) fn linear_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    n: usize,
    din: usize,
    dout: usize,
    want_input: bool,
    want_params: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = Vec::new();
    let mut gw = Vec::new();
    let mut gb = Vec::new();
    if want_input {
        gx = vec![T::zero(); n * din];
        gemm(n, dout, din, T::one(), dy, false, weight, false, T::zero(), &mut gx);
    }
    if want_params {
        gw = vec![T::zero(); dout * din];
        gemm(dout, n, din, T::one(), dy, true, x, false, T::zero(), &mut gw);
        gb = vec![T::zero(); dout];
        for i in 0..n {
            for (b, &v) in gb.iter_mut().zip(&dy[i * dout..][..dout]) {
                *b = *b + v;
            }
        }
    }
    (gx, gw, gb)
}

pub(crate) fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries whose forward activation was not positive.
pub(crate) fn relu_mask<T: Scalar>(grad: &mut [T], pre: &[T]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if !(p > T::zero()) {
            *g = T::zero();
        }
    }
}
