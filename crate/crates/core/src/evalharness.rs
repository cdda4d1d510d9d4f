//! Training classifiers from scratch on condensed or selected data, test
//! accuracy, and the random / herding coreset baselines.

use std::time::Instant;

use crate::condenser::{Precision, SyntheticSet, Upsample};
use crate::data::LabeledDataset;
use crate::encoder::{init_classifier, EncoderArch, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::{Purpose, RngState, Scalar, Tensor};

/// Classifier training recipe. Learning rate is multiplied by
/// `decay_factor` at each fraction of `epochs` listed in `decay_at`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay_at: Vec<f64>,
    pub decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub repeats: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 64,
            lr: 0.01,
            decay_at: vec![2.0 / 3.0, 5.0 / 6.0],
            decay_factor: 0.2,
            momentum: 0.9,
            weight_decay: 5e-4,
            repeats: 10,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.batch_size == 0 || self.repeats == 0 {
            return Err(Error::invalid("batch size and repeats must be at least 1"));
        }
        if !positive(self.lr) || !positive(self.decay_factor) {
            return Err(Error::invalid("learning rate and decay factor must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("momentum must be in [0, 1) and weight decay >= 0"));
        }
        if self.decay_at.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::invalid("decay points are fractions of the epoch budget"));
        }
        Ok(())
    }

    /// Learning rate used during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self
            .decay_at
            .iter()
            .filter(|f| epoch >= (**f * self.epochs as f64).floor() as usize)
            .count();
        self.lr * self.decay_factor.powi(drops as i32)
    }
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::shape(format!("{n} logit rows but {} labels", labels.len())));
    }
    let mut grad = Vec::with_capacity(n * k);
    let mut loss = 0.0;
    for (row, &y) in logits.data().chunks_exact(k).zip(labels) {
        if y >= k {
            return Err(Error::invalid(format!("label {y} with {k} logits")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (row[y] - max);
        grad.extend(exps.iter().enumerate().map(|(j, e)| (e / z - f64::from(j == y)) / n as f64));
    }
    Ok((loss / n as f64, Tensor::new([n, k], grad)?))
}

/// Trains a fresh encoder with a linear head; see [`train_classifier_logged`].
pub fn train_classifier(
    data: &LabeledDataset,
    arch: &EncoderArch,
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<EncoderParams> {
    Ok(train_classifier_logged(data, arch, cfg, rng)?.0)
}

/// Trains with SGD (momentum, L2 weight decay on every parameter) on
/// softmax cross-entropy. Weights come from `rng`, the per-epoch shuffles
/// from `rng.split(Shuffle, [epoch])`. Also returns the mean training loss
/// of every epoch.
pub fn train_classifier_logged(
    data: &LabeledDataset,
    arch: &EncoderArch,
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<(EncoderParams, Vec<f64>)> {
    cfg.validate()?;
    if data.input_shape() != arch.input {
        return Err(Error::shape(format!(
            "training images are {:?} but the encoder expects {:?}",
            data.input_shape(),
            arch.input
        )));
    }
    if let Some(c) = data.class_index().iter().position(|ids| ids.is_empty()) {
        return Err(Error::EmptyClass(c));
    }
    let params = init_classifier(arch, data.num_classes(), rng)?;
    match cfg.precision {
        Precision::F32 => {
            let (p, log) = sgd::<f32>(data, params.cast(), cfg, rng)?;
            Ok((p.cast(), log))
        }
        Precision::F64 => sgd::<f64>(data, params, cfg, rng),
    }
}

fn sgd<T: Scalar>(
    data: &LabeledDataset,
    mut params: EncoderParams<T>,
    cfg: &TrainConfig,
    rng: &RngState,
) -> Result<(EncoderParams<T>, Vec<f64>)> {
    let n = data.len();
    let batch = cfg.batch_size.min(n);
    let images = data.images().cast::<T>();
    let mut velocity = params.zeros_like();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let (mom, wd) = (T::from_f64_lossy(cfg.momentum), T::from_f64_lossy(cfg.weight_decay));
    for epoch in 0..cfg.epochs {
        let lr = T::from_f64_lossy(cfg.lr_at(epoch));
        let mut order: Vec<usize> = (0..n).collect();
        rng.split(Purpose::Shuffle, &[epoch as u64]).shuffle(&mut order);
        let mut total = 0.0;
        for ids in order.chunks(batch) {
            let x = images.select(ids);
            let labels: Vec<usize> = ids.iter().map(|&i| data.labels()[i]).collect();
            let diverged = |e: Error| match e {
                Error::NonFinite(_) => Error::Diverged { epoch },
                other => other,
            };
            let (logits, tape) = params.forward(&x, true).map_err(diverged)?;
            let (loss, grad) = softmax_cross_entropy(&logits.cast(), &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            total += loss * ids.len() as f64;
            let grads = tape.backward_weights(&grad.cast()).map_err(diverged)?;
            for ((w, v), g) in params.tensors_mut().into_iter().zip(velocity.tensors_mut()).zip(grads.tensors()) {
                for ((w, v), &g) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *v = mom * *v + g + wd * *w;
                    *w = *w - lr * *v;
                }
            }
        }
        let mean = total / n as f64;
        if !mean.is_finite() || params.tensors().iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged { epoch });
        }
        epoch_loss.push(mean);
    }
    Ok((params, epoch_loss))
}

/// Predicted class of every example; ties go to the lower class index.
pub fn predict(params: &EncoderParams, images: &Tensor, precision: Precision) -> Result<Vec<usize>> {
    let n = images.shape().first().copied().unwrap_or(0);
    let mut out = Vec::with_capacity(n);
    let chunk = 500;
    let p32 = (precision == Precision::F32).then(|| params.cast::<f32>());
    for start in (0..n).step_by(chunk) {
        let ids: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let x = images.select(&ids);
        let logits = match &p32 {
            Some(p) => p.logits(&x.cast())?.cast::<f64>(),
            None => params.logits(&x)?,
        };
        out.extend((0..ids.len()).map(|i| argmax(logits.item(i))));
    }
    Ok(out)
}

/// Index of the largest value, the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of test examples whose argmax logit is the true label.
pub fn test_accuracy(params: &EncoderParams, testset: &LabeledDataset) -> Result<f64> {
    accuracy_with(params, testset, Precision::F64)
}

pub fn accuracy_with(params: &EncoderParams, testset: &LabeledDataset, precision: Precision) -> Result<f64> {
    if params.head.is_none() {
        return Err(Error::MissingHead);
    }
    if testset.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let pred = predict(params, testset.images(), precision)?;
    let hits = pred.iter().zip(testset.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / testset.len() as f64)
}

/// Accuracies over repeated training runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `accuracies`.
    pub std: f64,
    pub wall_time_s: f64,
}

impl EvalReport {
    pub fn from_accuracies(accuracies: Vec<f64>, wall_time_s: f64) -> Self {
        let n = accuracies.len().max(1) as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let var = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        EvalReport { accuracies, mean, std: var.sqrt(), wall_time_s }
    }
}

/// Trains `cfg.repeats` classifiers on `train` (repeat `r` seeded by
/// `RngState::new(cfg.seed).split(Repeat, [r])`) and tests each one.
pub fn evaluate_dataset(
    train: &LabeledDataset,
    testset: &LabeledDataset,
    arch: &EncoderArch,
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let start = Instant::now();
    let root = RngState::new(cfg.seed);
    let accuracies = (0..cfg.repeats)
        .map(|r| {
            let params = train_classifier(train, arch, cfg, &root.split(Purpose::Repeat, &[r as u64]))?;
            accuracy_with(&params, testset, cfg.precision)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_accuracies(accuracies, start.elapsed().as_secs_f64()))
}

/// [`evaluate_dataset`] on the expanded images of a synthetic set.
pub fn evaluate_condensed(
    set: &SyntheticSet,
    testset: &LabeledDataset,
    arch: &EncoderArch,
    cfg: &TrainConfig,
    upsample: Upsample,
) -> Result<EvalReport> {
    evaluate_dataset(&set.expanded_dataset(upsample)?, testset, arch, cfg)
}

/// `ipc` random examples of every class (stream `rng.split(Selection, [c])`),
/// class-major.
pub fn select_random(dataset: &LabeledDataset, ipc: usize, rng: &RngState) -> Result<LabeledDataset> {
    let mut ids = Vec::with_capacity(ipc * dataset.num_classes());
    for (c, list) in dataset.class_index().iter().enumerate() {
        if list.len() < ipc {
            return Err(Error::UndersizedClass { class: c, available: list.len(), requested: ipc });
        }
        let mut stream = rng.split(Purpose::Selection, &[c as u64]);
        ids.extend(stream.choose_distinct(list.len(), ipc).into_iter().map(|k| list[k]));
    }
    dataset.select(&ids)
}

/// Greedy herding order over the rows of `reps`: each step takes the row
/// that brings the running mean of the chosen rows closest to the mean of
/// all rows (lowest index on ties).
pub fn herding_order(reps: &Tensor, k: usize) -> Result<Vec<usize>> {
    let (n, p) = reps.dims2()?;
    if k > n {
        return Err(Error::invalid(format!("cannot herd {k} of {n} points")));
    }
    let target = reps.column_means()?;
    let mut sum = vec![0.0; p];
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(k);
    for step in 0..k {
        let inv = 1.0 / (step + 1) as f64;
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let d: f64 = reps
                .item(i)
                .iter()
                .zip(&sum)
                .zip(&target)
                .map(|((r, s), t)| {
                    let diff = (s + r) * inv - t;
                    diff * diff
                })
                .sum();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        let (_, i) = best.expect("k <= n leaves a candidate");
        taken[i] = true;
        for (s, r) in sum.iter_mut().zip(reps.item(i)) {
            *s += r;
        }
        order.push(i);
    }
    Ok(order)
}

/// Herding selection of `ipc` examples per class in the representation
/// space of `encoder`, or on the flattened pixels when `encoder` is `None`.
/// Selected examples are class-major, in herding order.
pub fn select_herding(dataset: &LabeledDataset, ipc: usize, encoder: Option<&EncoderParams>) -> Result<LabeledDataset> {
    let mut ids = Vec::with_capacity(ipc * dataset.num_classes());
    for (c, list) in dataset.class_index().iter().enumerate() {
        if list.len() < ipc {
            return Err(Error::UndersizedClass { class: c, available: list.len(), requested: ipc });
        }
        let images = dataset.class_images(c);
        let reps = match encoder {
            Some(e) => e.represent(&images)?,
            None => {
                let n = images.shape()[0];
                let len = images.item_len();
                images.reshape(vec![n, len])?
            }
        };
        ids.extend(herding_order(&reps, ipc)?.into_iter().map(|k| list[k]));
    }
    dataset.select(&ids)
}
