//! Labeled image datasets: binary loaders, Gaussian mixtures, per-channel
//! normalization and per-class indexing.

mod formats;
mod mixture;

pub use formats::{load_cifar_binary, load_idx, parse_cifar, parse_idx, CIFAR_RECORD};
pub use mixture::{gen_mixture, MixtureSpec};

use crate::encoder::InputShape;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Per-channel normalization statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Statistics that leave images unchanged.
    pub fn identity(channels: usize) -> Self {
        NormStats { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::invalid("mean and std have different channel counts"));
        }
        if let Some(c) = self.std.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::ZeroStd(c));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("non-finite channel mean"));
        }
        Ok(())
    }

    /// Mean and std of every channel of an `n × C × H × W` tensor.
    pub fn compute(images: &Tensor) -> Result<Self> {
        let (n, c, plane) = split_dims(images)?;
        let count = (n * plane) as f64;
        if n == 0 || plane == 0 {
            return Err(Error::invalid("cannot compute statistics of an empty image set"));
        }
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let values = || (0..n).flat_map(move |i| images.item(i)[ch * plane..][..plane].iter().copied());
            let m = values().sum::<f64>() / count;
            let v = values().map(|x| (x - m) * (x - m)).sum::<f64>() / count;
            mean[ch] = m;
            std[ch] = v.sqrt();
        }
        let stats = NormStats { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    /// `(x - mean) / std` per channel.
    pub fn apply(&self, images: &Tensor) -> Result<Tensor> {
        self.transform(images, |x, m, s| (x - m) / s)
    }

    /// `x * std + mean` per channel.
    pub fn invert(&self, images: &Tensor) -> Result<Tensor> {
        self.transform(images, |x, m, s| x * s + m)
    }

    fn transform(&self, images: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        self.validate()?;
        let (_, c, plane) = split_dims(images)?;
        if c != self.channels() {
            return Err(Error::shape(format!(
                "statistics cover {} channels, images have {c}",
                self.channels()
            )));
        }
        let mut out = images.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            *v = f(*v, self.mean[ch], self.std[ch]);
        }
        Ok(out)
    }
}

fn split_dims(images: &Tensor) -> Result<(usize, usize, usize)> {
    match images.shape() {
        [n, c, h, w] => Ok((*n, *c, h * w)),
        s => Err(Error::shape(format!("expected n×C×H×W images, got {s:?}"))),
    }
}

/// How [`normalize`] obtains its statistics.
#[derive(Debug, Clone, PartialEq)]
pub enum StatsMode {
    Compute,
    Supplied(NormStats),
}

/// Images with integer labels and a per-class index.
///
/// `stats` holds the normalization already applied to `images`, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    stats: Option<NormStats>,
    class_index: Vec<Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (n, _, _) = split_dims(&images)?;
        if n != labels.len() {
            return Err(Error::CountMismatch { images: n, labels: labels.len() });
        }
        if num_classes == 0 {
            return Err(Error::invalid("dataset needs at least one class"));
        }
        let mut class_index = vec![Vec::new(); num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::invalid(format!("label {y} at index {i} is outside 0..{num_classes}")));
            }
            class_index[y].push(i);
        }
        Ok(LabeledDataset { images, labels, num_classes, stats: None, class_index })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_shape(&self) -> InputShape {
        let s = self.images.shape();
        InputShape::new(s[1], s[2], s[3])
    }

    /// Example ids of every class, in dataset order.
    pub fn class_index(&self) -> &[Vec<usize>] {
        &self.class_index
    }

    pub fn class_ids(&self, class: usize) -> &[usize] {
        &self.class_index[class]
    }

    /// All images of one class, in dataset order.
    pub fn class_images(&self, class: usize) -> Tensor {
        self.images.select(&self.class_index[class])
    }

    /// Examples at the given ids, keeping the class count and statistics.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("example id {bad} out of range for {} examples", self.len())));
        }
        let labels = ids.iter().map(|&i| self.labels[i]).collect();
        let mut out = LabeledDataset::new(self.images.select(ids), labels, self.num_classes)?;
        out.stats = self.stats.clone();
        Ok(out)
    }

    /// The first `k` examples of every class, class-major.
    pub fn first_per_class(&self, k: usize) -> Result<Self> {
        let mut ids = Vec::with_capacity(k * self.num_classes);
        for (class, list) in self.class_index.iter().enumerate() {
            if list.len() < k {
                return Err(Error::UndersizedClass { class, available: list.len(), requested: k });
            }
            ids.extend_from_slice(&list[..k]);
        }
        self.select(&ids)
    }

    /// Normalized copy with the statistics recorded.
    pub fn normalize(&self, mode: StatsMode) -> Result<Self> {
        if self.stats.is_some() {
            return Err(Error::invalid("dataset is already normalized"));
        }
        let stats = match mode {
            StatsMode::Compute => NormStats::compute(&self.images)?,
            StatsMode::Supplied(s) => s,
        };
        let images = stats.apply(&self.images)?;
        Ok(LabeledDataset { images, stats: Some(stats), ..self.clone() })
    }

    /// Marks the images as already normalized with `stats`.
    pub fn with_stats(mut self, stats: NormStats) -> Result<Self> {
        stats.validate()?;
        if stats.channels() != self.input_shape().channels {
            return Err(Error::shape("normalization statistics do not match the channel count"));
        }
        self.stats = Some(stats);
        Ok(self)
    }

    /// Pixel-space copy (inverse of [`LabeledDataset::normalize`]).
    pub fn denormalize(&self) -> Result<Self> {
        match &self.stats {
            None => Ok(self.clone()),
            Some(stats) => Ok(LabeledDataset { images: stats.invert(&self.images)?, stats: None, ..self.clone() }),
        }
    }
}

/// Normalizes `dataset`; see [`LabeledDataset::normalize`].
pub fn normalize(dataset: &LabeledDataset, mode: StatsMode) -> Result<LabeledDataset> {
    dataset.normalize(mode)
}
