mod common;

use common::{dot, gaussian, rel_err, smooth_diff};
use m3d_core::encoder::{init_classifier, init_encoder, EncoderArch, EncoderParams, InputShape};
use m3d_core::numerics::RngState;

fn projected(p: &EncoderParams, x: &m3d_core::numerics::Tensor, g: &m3d_core::numerics::Tensor, head: bool) -> f64 {
    let out = if head { p.logits(x).unwrap() } else { p.represent(x).unwrap() };
    dot(&out, g)
}

#[test]
fn convnet_input_gradients_match_finite_differences() {
    let arch = EncoderArch::convnet3(InputShape::new(2, 12, 12), 4);
    let p = init_encoder(&arch, &RngState::new(21)).unwrap();
    let x = gaussian(22, &[3, 2, 12, 12], 1.0);
    let g = gaussian(23, &[3, arch.rep_dim()], 1.0);
    let (_, tape) = p.forward(&x, false).unwrap();
    let grad = tape.backward_inputs(&g).unwrap();
    let mut pick = RngState::new(24);
    let mut checked = 0;
    while checked < 50 {
        let i = pick.below(x.len());
        let Some(fd) = smooth_diff(&x, i, 1e-5, &mut |t| projected(&p, t, &g, false)) else {
            continue;
        };
        let err = rel_err(grad.data()[i], fd, 1e-8);
        assert!(err < 1e-4, "pixel {i}: analytic {} vs fd {fd}", grad.data()[i]);
        checked += 1;
    }
}

#[test]
fn mlp_input_gradients_match_finite_differences() {
    let arch = EncoderArch::mlp2(InputShape::new(1, 5, 5), 16);
    let p = init_encoder(&arch, &RngState::new(31)).unwrap();
    let x = gaussian(32, &[4, 1, 5, 5], 1.0);
    let g = gaussian(33, &[4, 16], 1.0);
    let (_, tape) = p.forward(&x, false).unwrap();
    let grad = tape.backward_inputs(&g).unwrap();
    let mut checked = 0;
    for i in 0..x.len() {
        if let Some(fd) = smooth_diff(&x, i, 1e-5, &mut |t| projected(&p, t, &g, false)) {
            assert!(rel_err(grad.data()[i], fd, 1e-8) < 1e-4);
            checked += 1;
        }
    }
    assert!(checked >= 50);
}

#[test]
fn weight_gradients_match_finite_differences() {
    for arch in [
        EncoderArch::convnet3(InputShape::new(1, 8, 8), 4),
        EncoderArch::mlp2(InputShape::new(1, 4, 4), 8),
    ] {
        let p = init_classifier(&arch, 3, &RngState::new(41)).unwrap();
        let x = gaussian(42, &[4, 1, arch.input.height, arch.input.width], 1.0);
        let g = gaussian(43, &[4, 3], 1.0);
        let (_, tape) = p.forward(&x, true).unwrap();
        let grads = tape.backward_weights(&g).unwrap();
        let n_tensors = p.tensors().len();
        let mut pick = RngState::new(44);
        let mut checked = 0;
        while checked < 50 {
            let t = pick.below(n_tensors);
            let i = pick.below(p.tensors()[t].len());
            let base = p.tensors()[t].clone();
            let fd = smooth_diff(&base, i, 1e-5, &mut |w| {
                let mut q = p.clone();
                *q.tensors_mut()[t] = w.clone();
                projected(&q, &x, &g, true)
            });
            let Some(fd) = fd else { continue };
            let analytic = grads.tensors()[t].data()[i];
            assert!(rel_err(analytic, fd, 1e-8) < 1e-4, "{arch} tensor {t}[{i}]: {analytic} vs {fd}");
            checked += 1;
        }
    }
}
