//! Splitting an image into an `l × l` grid of patches and up-sampling each
//! patch back to full size.

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Upsample {
    Nearest,
    #[default]
    Bilinear,
}

impl std::fmt::Display for Upsample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Upsample::Nearest => "nearest",
            Upsample::Bilinear => "bilinear",
        })
    }
}

impl std::str::FromStr for Upsample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Upsample::Nearest),
            "bilinear" => Ok(Upsample::Bilinear),
            _ => Err(Error::invalid(format!("unknown up-sampling mode {s:?}"))),
        }
    }
}

/// Source taps for one output coordinate: `v = w0 * src[i0] + w1 * src[i1]`.
#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

/// One-dimensional taps for scaling `len / l` samples up to `len`.
///
/// Bilinear uses half-pixel centres: output `o` samples source position
/// `(o + 0.5) / l - 0.5`, clamped to the patch.
fn taps(len: usize, l: usize, mode: Upsample) -> Vec<Tap> {
    let small = len / l;
    (0..len)
        .map(|o| match mode {
            Upsample::Nearest => Tap { i0: o / l, i1: o / l, w0: 1.0, w1: 0.0 },
            Upsample::Bilinear => {
                let src = ((o as f64 + 0.5) / l as f64 - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(small - 1);
                let i1 = (i0 + 1).min(small - 1);
                let frac = src - i0 as f64;
                Tap { i0, i1, w0: 1.0 - frac, w1: frac }
            }
        })
        .collect()
}

fn check(shape: &[usize], l: usize) -> Result<(usize, usize, usize, usize)> {
    let [n, c, h, w] = shape else {
        return Err(Error::shape(format!("factor expansion needs n×C×H×W, got {shape:?}")));
    };
    if l == 0 || h % l != 0 || w % l != 0 {
        return Err(Error::invalid(format!("factor {l} does not divide image size {h}×{w}")));
    }
    Ok((*n, *c, *h, *w))
}

/// Expands every image into `l²` images of the same size: patch `(py, px)`
/// of image `i` becomes output `i * l² + py * l + px`.
pub fn factor_expand<T: Scalar>(images: &Tensor<T>, l: usize, mode: Upsample) -> Result<Tensor<T>> {
    let (n, c, h, w) = check(images.shape(), l)?;
    if l == 1 {
        return Ok(images.clone());
    }
    let (ph, pw) = (h / l, w / l);
    let (ty, tx) = (taps(h, l, mode), taps(w, l, mode));
    let mut out = Vec::with_capacity(n * l * l * c * h * w);
    for i in 0..n {
        let img = images.item(i);
        for py in 0..l {
            for px in 0..l {
                for ch in 0..c {
                    let plane = &img[ch * h * w..][..h * w];
                    let at = |y: usize, x: usize| plane[(py * ph + y) * w + px * pw + x].as_f64();
                    for a in &ty {
                        for b in &tx {
                            let top = b.w0 * at(a.i0, b.i0) + b.w1 * at(a.i0, b.i1);
                            let bottom = b.w0 * at(a.i1, b.i0) + b.w1 * at(a.i1, b.i1);
                            out.push(T::from_f64_lossy(a.w0 * top + a.w1 * bottom));
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n * l * l, c, h, w], out)
}

/// Adjoint of [`factor_expand`]: scatters gradients on the expanded images
/// back to the source pixels.
pub fn factor_expand_backward<T: Scalar>(grad: &Tensor<T>, l: usize, mode: Upsample) -> Result<Tensor<T>> {
    let (m, c, h, w) = check(grad.shape(), l)?;
    if m % (l * l) != 0 {
        return Err(Error::shape(format!("{m} expanded images is not a multiple of {}", l * l)));
    }
    if l == 1 {
        return Ok(grad.clone());
    }
    let n = m / (l * l);
    let (ph, pw) = (h / l, w / l);
    let (ty, tx) = (taps(h, l, mode), taps(w, l, mode));
    let mut out = vec![0.0f64; n * c * h * w];
    for i in 0..n {
        let dst = &mut out[i * c * h * w..][..c * h * w];
        for py in 0..l {
            for px in 0..l {
                let g = grad.item(i * l * l + py * l + px);
                for ch in 0..c {
                    let gp = &g[ch * h * w..][..h * w];
                    let plane = &mut dst[ch * h * w..][..h * w];
                    for (y, a) in ty.iter().enumerate() {
                        for (x, b) in tx.iter().enumerate() {
                            let v = gp[y * w + x].as_f64();
                            for (iy, wy) in [(a.i0, a.w0), (a.i1, a.w1)] {
                                for (ix, wx) in [(b.i0, b.w0), (b.i1, b.w1)] {
                                    plane[(py * ph + iy) * w + px * pw + ix] += wy * wx * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out.into_iter().map(T::from_f64_lossy).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    #[test]
    fn unit_factor_is_identity() {
        let x = RngState::new(1).gaussian([2, 3, 4, 6], 0.0, 1.0).unwrap();
        for mode in [Upsample::Nearest, Upsample::Bilinear] {
            assert_eq!(factor_expand(&x, 1, mode).unwrap(), x);
        }
    }

    #[test]
    fn nearest_replicates_patches() {
        let x = Tensor::new([1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let y = factor_expand(&x, 2, Upsample::Nearest).unwrap();
        assert_eq!(y.shape(), &[4, 1, 4, 4]);
        let (a, b, c, d) = (0.0, 1.0, 4.0, 5.0);
        assert_eq!(y.item(0), &[a, a, b, b, a, a, b, b, c, c, d, d, c, c, d, d]);
        assert_eq!(y.item(3)[0], 10.0);
        assert_eq!(y.item(3)[15], 15.0);
    }

    #[test]
    fn indivisible_factor_is_rejected() {
        let x = Tensor::<f64>::zeros([1, 1, 5, 4]);
        assert!(factor_expand(&x, 2, Upsample::Bilinear).is_err());
        assert!(factor_expand(&x, 0, Upsample::Bilinear).is_err());
    }

    #[test]
    fn backward_is_adjoint() {
        let mut rng = RngState::new(4);
        let x = rng.gaussian([2, 2, 6, 6], 0.0, 1.0).unwrap();
        for l in [2, 3] {
            let g = rng.gaussian([2 * l * l, 2, 6, 6], 0.0, 1.0).unwrap();
            for mode in [Upsample::Nearest, Upsample::Bilinear] {
                let y = factor_expand(&x, l, mode).unwrap();
                let gx = factor_expand_backward(&g, l, mode).unwrap();
                let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
                assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
            }
        }
    }
}
