mod common;

use std::path::PathBuf;

use m3d_core::condenser::{condense, CondenseConfig, LossMode, Precision, Upsample};
use m3d_core::data::{gen_mixture, load_idx, LabeledDataset, MixtureSpec};
use m3d_core::encoder::{init_classifier, init_encoder, EncoderArch, InputShape, Layer};
use m3d_core::evalharness::{
    evaluate_condensed, evaluate_dataset, herding_order, select_herding, select_random, test_accuracy,
    train_classifier, train_classifier_logged, TrainConfig,
};
use m3d_core::numerics::{RngState, Tensor};
use m3d_core::Error;

fn separable() -> LabeledDataset {
    let dim = 16;
    let spec = MixtureSpec::new(
        vec![vec![1.5; dim], vec![-1.5; dim]],
        vec![vec![1.0; dim], vec![1.0; dim]],
        InputShape::new(1, 4, 4),
    )
    .unwrap();
    gen_mixture(&spec, 50, &RngState::new(3)).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 16, repeats: 1, ..TrainConfig::default() }
}

#[test]
fn separable_mixture_is_fit_within_twenty_epochs() {
    let ds = separable();
    let arch = EncoderArch::mlp2(ds.input_shape(), 32);
    let params = train_classifier(&ds, &arch, &quick(20), &RngState::new(1)).unwrap();
    assert_eq!(test_accuracy(&params, &ds).unwrap(), 1.0);
}

#[test]
fn smoothed_training_loss_does_not_increase() {
    let ds = separable();
    let arch = EncoderArch::mlp2(ds.input_shape(), 32);
    let (_, losses) = train_classifier_logged(&ds, &arch, &quick(40), &RngState::new(2)).unwrap();
    let smoothed: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    for pair in smoothed.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12, "{smoothed:?}");
    }
}

#[test]
fn zero_epochs_and_determinism() {
    let ds = separable();
    let arch = EncoderArch::mlp2(ds.input_shape(), 8);
    let rng = RngState::new(9);
    let init = init_classifier(&arch, 2, &rng).unwrap();
    assert_eq!(train_classifier(&ds, &arch, &quick(0), &rng).unwrap(), init);
    let a = train_classifier(&ds, &arch, &quick(3), &rng).unwrap();
    let b = train_classifier(&ds, &arch, &quick(3), &rng).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, init);
}

#[test]
fn divergence_reports_epoch() {
    let ds = separable();
    let arch = EncoderArch::mlp2(ds.input_shape(), 8);
    let cfg = TrainConfig { lr: 1e30, momentum: 0.0, ..quick(10) };
    let r = train_classifier(&ds, &arch, &cfg, &RngState::new(0));
    assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
}

fn balanced_ten_class(per: usize) -> LabeledDataset {
    let labels: Vec<usize> = (0..10).flat_map(|c| std::iter::repeat_n(c, per)).collect();
    let images = RngState::new(4).gaussian([10 * per, 1, 2, 2], 0.0, 1.0).unwrap();
    LabeledDataset::new(images, labels, 10).unwrap()
}

#[test]
fn constant_predictor_scores_one_tenth() {
    let ds = balanced_ten_class(7);
    let arch = EncoderArch::mlp2(InputShape::new(1, 2, 2), 4);
    let mut p = init_classifier(&arch, 10, &RngState::new(0)).unwrap();
    let mut bias = vec![0.0; 10];
    bias[0] = 1.0;
    p.head = Some(Layer { weight: Tensor::zeros([10, 4]), bias: Tensor::new([10], bias).unwrap() });
    assert!((test_accuracy(&p, &ds).unwrap() - 0.1).abs() < 1e-15);
    // all-equal logits fall back to class 0 as well
    p.head.as_mut().unwrap().bias = Tensor::zeros([10]);
    assert!((test_accuracy(&p, &ds).unwrap() - 0.1).abs() < 1e-15);
    assert!(matches!(test_accuracy(&init_encoder(&arch, &RngState::new(0)).unwrap(), &ds), Err(Error::MissingHead)));
}

#[test]
fn perfect_logits_score_one() {
    let images = Tensor::new([4, 1, 1, 2], vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 3.0]).unwrap();
    let ds = LabeledDataset::new(images, vec![0, 1, 0, 1], 2).unwrap();
    let arch = EncoderArch::mlp2(InputShape::new(1, 1, 2), 2);
    let mut p = init_classifier(&arch, 2, &RngState::new(0)).unwrap();
    let eye = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    for layer in p.layers.iter_mut().chain(p.head.iter_mut()) {
        layer.weight = eye.clone();
        layer.bias = Tensor::zeros([2]);
    }
    assert_eq!(test_accuracy(&p, &ds).unwrap(), 1.0);
}

fn brute_force_herding(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = points.len();
    let p = points[0].len();
    let target: Vec<f64> = (0..p).map(|d| points.iter().map(|x| x[d]).sum::<f64>() / n as f64).collect();
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..k {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for cand in 0..n {
            if chosen.contains(&cand) {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push(cand);
            let d: f64 = (0..p)
                .map(|dim| {
                    let m = trial.iter().map(|&i| points[i][dim]).sum::<f64>() / trial.len() as f64;
                    (m - target[dim]).powi(2)
                })
                .sum();
            if d < best_d {
                best_d = d;
                best = cand;
            }
        }
        chosen.push(best);
    }
    chosen
}

#[test]
fn herding_matches_brute_force_reference() {
    for seed in 0..20 {
        let pts = RngState::new(seed).gaussian([12, 3], 0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..12).map(|i| pts.item(i).to_vec()).collect();
        assert_eq!(herding_order(&pts, 12).unwrap(), brute_force_herding(&rows, 12));
    }
}

#[test]
fn herding_outlier_comes_late_and_exhaustion_recovers_mean() {
    let mut pts = RngState::new(5).gaussian([9, 2], 0.0, 1.0).unwrap().into_data();
    pts.extend([6.0, 6.0]);
    let t = Tensor::new([10, 2], pts).unwrap();
    let rows: Vec<Vec<f64>> = (0..10).map(|i| t.item(i).to_vec()).collect();
    let order = herding_order(&t, 10).unwrap();
    assert_eq!(order, brute_force_herding(&rows, 10));
    let pos = order.iter().position(|&i| i == 9).unwrap();
    assert!(pos >= 5, "outlier picked at step {pos}");

    let images = t.clone().reshape(vec![10, 1, 1, 2]).unwrap();
    let ds = LabeledDataset::new(images, vec![0; 10], 1).unwrap();
    let all = select_herding(&ds, 10, None).unwrap();
    let a = all.images().clone().reshape(vec![10, 2]).unwrap().column_means().unwrap();
    let b = t.column_means().unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
    let one = select_herding(&ds, 1, None).unwrap();
    let closest = (0..10)
        .min_by(|&i, &j| {
            let d = |k: usize| rows[k].iter().zip(&b).map(|(x, m)| (x - m) * (x - m)).sum::<f64>();
            d(i).total_cmp(&d(j))
        })
        .unwrap();
    assert_eq!(one.images().data(), t.item(closest));
}

#[test]
fn random_selection_properties() {
    let ds = gen_mixture(&MixtureSpec::toy(), 30, &RngState::new(0)).unwrap();
    let a = select_random(&ds, 5, &RngState::new(1)).unwrap();
    assert!(a.class_index().iter().all(|ids| ids.len() == 5));
    assert_eq!(a, select_random(&ds, 5, &RngState::new(1)).unwrap());
    for i in 0..a.len() {
        assert!((0..ds.len()).any(|j| ds.images().item(j) == a.images().item(i) && ds.labels()[j] == a.labels()[i]));
    }
    assert!(matches!(select_random(&ds, 31, &RngState::new(1)), Err(Error::UndersizedClass { .. })));
    assert!(matches!(select_herding(&ds, 31, None), Err(Error::UndersizedClass { .. })));
}

#[test]
fn condensed_toy_set_is_not_worse_than_random_selection() {
    let spec = MixtureSpec::toy();
    let train = gen_mixture(&spec, 200, &RngState::new(10)).unwrap();
    let test = gen_mixture(&spec, 200, &RngState::new(11)).unwrap();
    let arch = EncoderArch::mlp2(spec.shape, 32);
    let eval = TrainConfig { epochs: 100, repeats: 3, ..TrainConfig::default() };
    let mut wins = 0;
    for seed in 0..3 {
        let mut cfg = CondenseConfig::new(arch, 4);
        cfg.iterations = 300;
        cfg.real_batch = 64;
        cfg.factor = 1;
        cfg.lr = 0.3;
        cfg.seed = seed;
        let out = condense(&train, &cfg, LossMode::M3d).unwrap();
        let before = out.set.clone();
        let m3d = evaluate_condensed(&out.set, &test, &arch, &TrainConfig { seed, ..eval.clone() }, Upsample::Bilinear)
            .unwrap();
        assert_eq!(out.set, before);
        let random = select_random(&train, 4, &RngState::new(seed)).unwrap();
        let base = evaluate_dataset(&random, &test, &arch, &TrainConfig { seed, ..eval.clone() }).unwrap();
        eprintln!("seed {seed}: m3d {:.3} random {:.3}", m3d.mean, base.mean);
        if m3d.mean >= base.mean {
            wins += 1;
        }
    }
    assert_eq!(wins, 3);
}

fn mnist_dir() -> Option<PathBuf> {
    let root = std::env::var_os("M3D_DATA_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    let dir = root.join("mnist");
    dir.join("t10k-images-idx3-ubyte").exists().then_some(dir)
}

#[test]
fn untrained_convnet_is_near_chance_on_mnist() {
    let Some(dir) = mnist_dir() else {
        eprintln!("MNIST not found; run scripts/fetch_mnist.sh");
        return;
    };
    let test = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"), None).unwrap();
    let arch = EncoderArch::convnet3(test.input_shape(), 8);
    for seed in 0..10 {
        let p = init_classifier(&arch, 10, &RngState::new(seed)).unwrap();
        let acc = m3d_core::evalharness::accuracy_with(&p, &test, Precision::F32).unwrap();
        assert!((0.05..=0.2).contains(&acc), "seed {seed}: {acc}");
    }
}
