mod common;

use common::{gaussian, rel_err, smooth_diff};
use m3d_core::condenser::{
    condense, factor_expand, init_synthetic, matching_step, CondenseConfig, InitMode, LossMode, Upsample,
};
use m3d_core::data::{gen_mixture, MixtureSpec};
use m3d_core::encoder::{init_encoder, EncoderArch, InputShape};
use m3d_core::kernels::{Bandwidth, KernelChoice};
use m3d_core::mmd::central_moments;
use m3d_core::numerics::{RngState, Tensor};

/// Reference resampler: for each output pixel, locate the source point with
/// half-pixel centres and blend the four surrounding patch pixels.
fn reference_bilinear(patch: &[Vec<f64>], out_h: usize, out_w: usize) -> Vec<Vec<f64>> {
    let (ph, pw) = (patch.len(), patch[0].len());
    let coord = |o: usize, scale: f64, size: usize| -> (usize, usize, f64) {
        let mut s = (o as f64 + 0.5) * (size as f64 / scale) - 0.5;
        if s < 0.0 {
            s = 0.0;
        }
        let lo = s.floor() as usize;
        let lo = lo.min(size - 1);
        let hi = if lo + 1 < size { lo + 1 } else { size - 1 };
        (lo, hi, s - lo as f64)
    };
    let mut out = vec![vec![0.0; out_w]; out_h];
    for (y, row) in out.iter_mut().enumerate() {
        let (y0, y1, fy) = coord(y, out_h as f64, ph);
        for (x, v) in row.iter_mut().enumerate() {
            let (x0, x1, fx) = coord(x, out_w as f64, pw);
            *v = patch[y0][x0] * (1.0 - fy) * (1.0 - fx)
                + patch[y0][x1] * (1.0 - fy) * fx
                + patch[y1][x0] * fy * (1.0 - fx)
                + patch[y1][x1] * fy * fx;
        }
    }
    out
}

#[test]
fn bilinear_matches_reference_resampler_on_ramp() {
    let (h, w) = (8, 6);
    let ramp: Vec<f64> = (0..h * w).map(|i| 0.3 * (i / w) as f64 - 0.7 * (i % w) as f64 + 2.0).collect();
    let img = Tensor::new([1, 1, h, w], ramp.clone()).unwrap();
    for l in [2, 3].into_iter().filter(|l| h % l == 0 && w % l == 0) {
        let out = factor_expand(&img, l, Upsample::Bilinear).unwrap();
        for py in 0..l {
            for px in 0..l {
                let patch: Vec<Vec<f64>> = (0..h / l)
                    .map(|y| (0..w / l).map(|x| ramp[(py * h / l + y) * w + px * w / l + x]).collect())
                    .collect();
                let want = reference_bilinear(&patch, h, w);
                let got = out.item(py * l + px);
                for y in 0..h {
                    for x in 0..w {
                        assert!((got[y * w + x] - want[y][x]).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn matching_loss_gradient_through_factor_expansion() {
    let arch = EncoderArch::convnet3(InputShape::new(1, 8, 8), 4);
    let enc = init_encoder(&arch, &RngState::new(51)).unwrap();
    let real = gaussian(52, &[10, 1, 8, 8], 1.0);
    let syn = gaussian(53, &[3, 1, 8, 8], 1.0);
    let cases = [
        (KernelChoice::Gaussian(Bandwidth::Median), LossMode::M3d, Upsample::Bilinear),
        (KernelChoice::polynomial_default(), LossMode::M3d, Upsample::Nearest),
        (KernelChoice::Linear, LossMode::Dm, Upsample::Bilinear),
    ];
    for (kernel, mode, up) in cases {
        let step = matching_step(&enc, &real, &syn, 2, up, &kernel, mode, false).unwrap();
        let mut loss = |s: &Tensor| matching_step(&enc, &real, s, 2, up, &kernel, mode, false).unwrap().loss;
        let mut pick = RngState::new(54);
        let mut checked = 0;
        while checked < 20 {
            let i = pick.below(syn.len());
            let Some(fd) = smooth_diff(&syn, i, 1e-5, &mut loss) else { continue };
            let err = rel_err(step.grad.data()[i], fd, 1e-8);
            assert!(err < 1e-4, "{kernel:?} pixel {i}: {} vs {fd}", step.grad.data()[i]);
            checked += 1;
        }
    }
}

/// Two classes of 1×4×4 "images" whose pixels tile a 2-D mean.
fn planar_mixture() -> MixtureSpec {
    let tile = |a: f64, b: f64| (0..16).map(|j| if j % 2 == 0 { a } else { b }).collect::<Vec<_>>();
    MixtureSpec::new(
        vec![tile(1.0, -0.5), tile(-1.0, 0.5)],
        vec![vec![0.5; 16], vec![1.5; 16]],
        InputShape::new(1, 4, 4),
    )
    .unwrap()
}

fn toy_config(seed: u64) -> CondenseConfig {
    let mut cfg = CondenseConfig::new(EncoderArch::mlp2(InputShape::new(1, 4, 4), 32), 4);
    cfg.iterations = 500;
    cfg.real_batch = 64;
    cfg.factor = 1;
    cfg.snapshot_every = 0;
    cfg.seed = seed;
    cfg
}

/// Distance between the set's per-pixel moments and the mixture's exact ones.
fn pixel_moment_gap(images: &Tensor, mean: &[f64], var: &[f64]) -> [f64; 2] {
    let n = images.shape()[0];
    let flat = images.clone().reshape(vec![n, mean.len()]).unwrap();
    let [m, v, _] = central_moments(&flat).unwrap();
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    [d(&m, mean), d(&v, var)]
}

/// Gaps `[order 1, order 2]` per class before and after 500 iterations.
fn toy_gaps() -> Vec<([f64; 2], [f64; 2])> {
    let spec = planar_mixture();
    let ds = gen_mixture(&spec, 500, &RngState::new(60)).unwrap();
    let cfg = toy_config(61);
    let init = init_synthetic(&ds, cfg.ipc, cfg.factor, cfg.init, &RngState::new(cfg.seed)).unwrap();
    let out = condense(&ds, &cfg, LossMode::M3d).unwrap();
    (0..2)
        .map(|c| {
            (
                pixel_moment_gap(&init.class_images(c), &spec.means[c], &spec.vars[c]),
                pixel_moment_gap(&out.set.class_images(c), &spec.means[c], &spec.vars[c]),
            )
        })
        .collect()
}

#[test]
fn toy_condensation_closes_first_moment_gap() {
    for (c, (before, after)) in toy_gaps().into_iter().enumerate() {
        assert!(after[0] < 0.25 * before[0], "class {c}: {} -> {}", before[0], after[0]);
    }
}

/// Four points per class cannot carry the full per-pixel variance of the
/// mixture: MMD-optimal point sets are under-dispersed, so this gap stalls
/// well above a quarter of its starting value.
#[test]
#[ignore = "known to fail: second-moment gap does not reach 25% with 4 points per class"]
fn toy_condensation_closes_second_moment_gap() {
    for (c, (before, after)) in toy_gaps().into_iter().enumerate() {
        assert!(after[1] < 0.25 * before[1], "class {c}: {} -> {}", before[1], after[1]);
    }
}

#[test]
fn smoothed_loss_decreases_for_most_seeds() {
    let spec = planar_mixture();
    let mut improved = 0;
    for seed in 0..10 {
        let ds = gen_mixture(&spec, 200, &RngState::new(100 + seed)).unwrap();
        let cfg = toy_config(seed);
        let out = condense(&ds, &cfg, LossMode::M3d).unwrap();
        let mut per_iter = vec![0.0; cfg.iterations];
        for row in &out.log {
            per_iter[row.iteration] += row.loss;
        }
        let alpha = 2.0 / 51.0;
        let mut ema = per_iter[0];
        let mut at10 = 0.0;
        for (i, &v) in per_iter.iter().enumerate() {
            ema = alpha * v + (1.0 - alpha) * ema;
            if i == 10 {
                at10 = ema;
            }
        }
        if ema < at10 {
            improved += 1;
        }
    }
    assert!(improved >= 9, "smoothed loss fell for only {improved} of 10 seeds");
}

#[test]
fn noise_initialization_also_condenses() {
    let spec = planar_mixture();
    let ds = gen_mixture(&spec, 100, &RngState::new(70)).unwrap();
    let mut cfg = toy_config(71);
    cfg.init = InitMode::Noise;
    cfg.iterations = 50;
    let out = condense(&ds, &cfg, LossMode::Dm).unwrap();
    assert!(out.set.images().data().iter().all(|v| v.is_finite()));
}
