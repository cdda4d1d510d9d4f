//! Learning a small synthetic set whose encoder representations match the
//! real data of each class.
//!
//! Every iteration visits each class once: draw a real batch, expand the
//! class's synthetic images with the factor technique, embed both with the
//! current randomly initialized encoder, and take a plain gradient step on
//! the synthetic pixels. A fresh encoder is drawn every `ipm` iterations.

mod factor;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

pub use factor::{factor_expand, factor_expand_backward, Upsample};

use crate::data::{LabeledDataset, NormStats};
use crate::encoder::{init_encoder, EncoderArch, EncoderParams, InputShape};
use crate::error::{Error, Result};
use crate::kernels::KernelChoice;
use crate::mmd::{dm_grad_syn, dm_loss, mmd2_biased, mmd2_grad_syn, MomentReport, RepBatch};
use crate::numerics::{Purpose, RngState, Scalar, Tensor};

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(Error::invalid(format!("unknown {} {s:?}", stringify!($ty)))),
                }
            }
        }
    };
}

/// How synthetic images start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// Random real images of the class, drawn without replacement.
    #[default]
    RealSample,
    /// Unit Gaussian pixels.
    Noise,
}

named_enum!(InitMode { RealSample => "real", Noise => "noise" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// Biased MMD² under the configured kernel.
    #[default]
    M3d,
    /// Squared distance between representation means.
    Dm,
}

named_enum!(LossMode { M3d => "m3d", Dm => "dm" });

/// Arithmetic used inside the encoder. Losses and the synthetic pixels are
/// always `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

named_enum!(Precision { F32 => "f32", F64 => "f64" });

/// Condensed images, `classes × ipc × C × H × W`, in normalized space.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    images: Tensor,
    factor: usize,
    stats: Option<NormStats>,
}

impl SyntheticSet {
    pub fn new(images: Tensor, factor: usize, stats: Option<NormStats>) -> Result<Self> {
        let [classes, ipc, _, h, w] = images.shape() else {
            return Err(Error::shape(format!(
                "synthetic images must be classes×ipc×C×H×W, got {:?}",
                images.shape()
            )));
        };
        if *classes == 0 || *ipc == 0 {
            return Err(Error::invalid("synthetic set needs at least one class and one image per class"));
        }
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::invalid(format!("factor {factor} does not divide {h}×{w}")));
        }
        if let Some(s) = &stats {
            s.validate()?;
            if s.channels() != images.shape()[2] {
                return Err(Error::shape("normalization statistics do not match the channel count"));
            }
        }
        Ok(SyntheticSet { images, factor, stats })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn num_classes(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn ipc(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    pub fn input_shape(&self) -> InputShape {
        let s = self.images.shape();
        InputShape::new(s[2], s[3], s[4])
    }

    fn class_len(&self) -> usize {
        self.ipc() * self.input_shape().len()
    }

    /// The stored images of one class, `ipc × C × H × W`.
    pub fn class_images(&self, class: usize) -> Tensor {
        let s = self.input_shape();
        let data = self.images.item(class).to_vec();
        Tensor::new(vec![self.ipc(), s.channels, s.height, s.width], data).expect("class slice shape")
    }

    /// The `ipc · factor²` training images of one class.
    pub fn expanded_class(&self, class: usize, mode: Upsample) -> Result<Tensor> {
        factor_expand(&self.class_images(class), self.factor, mode)
    }

    /// Every expanded image with its label, ready for classifier training.
    pub fn expanded_dataset(&self, mode: Upsample) -> Result<LabeledDataset> {
        let parts = (0..self.num_classes())
            .map(|c| self.expanded_class(c, mode))
            .collect::<Result<Vec<_>>>()?;
        let per = parts[0].shape()[0];
        let images = Tensor::concat(&parts.iter().collect::<Vec<_>>())?;
        let labels = (0..self.num_classes()).flat_map(|c| std::iter::repeat_n(c, per)).collect();
        let ds = LabeledDataset::new(images, labels, self.num_classes())?;
        match &self.stats {
            Some(s) => ds.with_stats(s.clone()),
            None => Ok(ds),
        }
    }

    /// Images mapped back to pixel space and clamped to `[0, 1]`.
    pub fn to_pixels(&self) -> Result<Tensor> {
        let s = self.images.shape().to_vec();
        let flat = self.images.clone().reshape(vec![s[0] * s[1], s[2], s[3], s[4]])?;
        let px = match &self.stats {
            Some(st) => st.invert(&flat)?,
            None => flat,
        };
        px.map(|v| v.clamp(0.0, 1.0)).reshape(s)
    }
}

/// Condensation hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CondenseConfig {
    pub arch: EncoderArch,
    pub ipc: usize,
    /// Total iterations; every iteration visits each class once.
    pub iterations: usize,
    /// Iterations per randomly initialized encoder.
    pub ipm: usize,
    pub lr: f64,
    pub real_batch: usize,
    pub kernel: KernelChoice,
    pub factor: usize,
    pub upsample: Upsample,
    pub init: InitMode,
    pub precision: Precision,
    /// Moment snapshots are logged every this many iterations (0: never).
    pub snapshot_every: usize,
    pub seed: u64,
}

impl CondenseConfig {
    pub fn new(arch: EncoderArch, ipc: usize) -> Self {
        CondenseConfig {
            arch,
            ipc,
            iterations: 2000,
            ipm: 5,
            lr: 1.0,
            real_batch: 256,
            kernel: KernelChoice::default(),
            factor: 2,
            upsample: Upsample::Bilinear,
            init: InitMode::RealSample,
            precision: Precision::F64,
            snapshot_every: 100,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.ipc == 0 {
            return Err(Error::invalid("ipc must be at least 1"));
        }
        if self.ipm == 0 {
            return Err(Error::invalid("iterations per model must be at least 1"));
        }
        if self.iterations > 0 && self.iterations < self.ipm {
            return Err(Error::invalid(format!(
                "{} iterations is fewer than one encoder's {} iterations",
                self.iterations, self.ipm
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.real_batch == 0 {
            return Err(Error::invalid("real batch size must be at least 1"));
        }
        let inp = self.arch.input;
        if self.factor == 0 || inp.height % self.factor != 0 || inp.width % self.factor != 0 {
            return Err(Error::invalid(format!(
                "factor {} does not divide {}×{}",
                self.factor, inp.height, inp.width
            )));
        }
        if let KernelChoice::Gaussian(crate::kernels::Bandwidth::Fixed(l)) = self.kernel {
            crate::kernels::KernelSpec::gaussian(l)?;
        }
        if let KernelChoice::Polynomial { c, d } = self.kernel {
            crate::kernels::KernelSpec::polynomial(c, d)?;
        }
        Ok(())
    }
}

/// Initial synthetic set. Class `c` draws from `rng.split(SyntheticInit, [c])`.
///
/// Real-sample mode with `factor = l` draws `ipc · l²` distinct class images
/// and packs each group of `l²` into one stored image, box-downsampled into
/// the patch that [`factor_expand`] later up-samples back, so the expanded
/// set starts as (blurred) real examples.
pub fn init_synthetic(
    dataset: &LabeledDataset,
    ipc: usize,
    factor: usize,
    mode: InitMode,
    rng: &RngState,
) -> Result<SyntheticSet> {
    if ipc == 0 {
        return Err(Error::invalid("ipc must be at least 1"));
    }
    let s = dataset.input_shape();
    if factor == 0 || s.height % factor != 0 || s.width % factor != 0 {
        return Err(Error::invalid(format!("factor {factor} does not divide {}×{}", s.height, s.width)));
    }
    let classes = dataset.num_classes();
    let per_image = factor * factor;
    let mut data = Vec::with_capacity(classes * ipc * s.len());
    for c in 0..classes {
        let mut stream = rng.split(Purpose::SyntheticInit, &[c as u64]);
        match mode {
            InitMode::RealSample => {
                let ids = dataset.class_ids(c);
                let need = ipc * per_image;
                if ids.len() < need {
                    return Err(Error::UndersizedClass { class: c, available: ids.len(), requested: need });
                }
                let picks = stream.choose_distinct(ids.len(), need);
                for group in picks.chunks(per_image) {
                    let sources: Vec<&[f64]> = group.iter().map(|&k| dataset.images().item(ids[k])).collect();
                    pack_factor(&sources, s, factor, &mut data);
                }
            }
            InitMode::Noise => data.extend(stream.gaussian([ipc * s.len()], 0.0, 1.0)?.into_data()),
        }
    }
    let images = Tensor::new(vec![classes, ipc, s.channels, s.height, s.width], data)?;
    SyntheticSet::new(images, factor, dataset.stats().cloned())
}

/// Writes one stored image whose `l × l` patches are box-downsampled copies
/// of `sources` (patch `py · l + px` from source `py · l + px`).
fn pack_factor(sources: &[&[f64]], s: InputShape, l: usize, out: &mut Vec<f64>) {
    if l == 1 {
        out.extend_from_slice(sources[0]);
        return;
    }
    let (ph, pw) = (s.height / l, s.width / l);
    let inv = 1.0 / (l * l) as f64;
    for ch in 0..s.channels {
        for y in 0..s.height {
            for x in 0..s.width {
                let (py, px, oy, ox) = (y / ph, x / pw, y % ph, x % pw);
                let src = &sources[py * l + px][ch * s.height * s.width..];
                let mut acc = 0.0;
                for dy in 0..l {
                    let row = &src[(oy * l + dy) * s.width + ox * l..];
                    acc += row[..l].iter().sum::<f64>();
                }
                out.push(acc * inv);
            }
        }
    }
}

/// `n` images of class `class`: distinct examples when the class is large
/// enough, otherwise uniform draws with replacement.
pub fn sample_class_batch(dataset: &LabeledDataset, class: usize, n: usize, rng: &RngState) -> Result<Tensor> {
    if class >= dataset.num_classes() {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    let ids = dataset.class_ids(class);
    if ids.is_empty() {
        return Err(Error::EmptyClass(class));
    }
    let mut stream = rng.clone();
    let picks: Vec<usize> = if n <= ids.len() {
        stream.choose_distinct(ids.len(), n).into_iter().map(|k| ids[k]).collect()
    } else {
        (0..n).map(|_| ids[stream.below(ids.len())]).collect()
    };
    Ok(dataset.images().select(&picks))
}

/// Loss and synthetic-pixel gradient of one class step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub loss: f64,
    /// Gradient w.r.t. the stored synthetic images of the class.
    pub grad: Tensor,
    /// Moment distances between the real and synthetic representations, when
    /// both batches have at least two points.
    pub moments: Option<MomentReport>,
}

/// Matching loss of one class under a fixed encoder, with its gradient
/// w.r.t. the stored (unexpanded) synthetic images.
#[allow(clippy::too_many_arguments)]
pub fn matching_step<T: Scalar>(
    encoder: &EncoderParams<T>,
    real: &Tensor<T>,
    syn: &Tensor,
    factor: usize,
    upsample: Upsample,
    kernel: &KernelChoice,
    mode: LossMode,
    want_moments: bool,
) -> Result<StepOutcome> {
    let expanded = factor_expand(syn, factor, upsample)?.cast::<T>();
    let real_rep = RepBatch::real(encoder.represent(real)?.cast())?;
    let (syn_out, tape) = encoder.forward(&expanded, false)?;
    let syn_rep = RepBatch::synthetic(syn_out.cast())?;
    let (loss, grad_rep) = match mode {
        LossMode::Dm => (dm_loss(&real_rep, &syn_rep)?, dm_grad_syn(&real_rep, &syn_rep)?),
        LossMode::M3d => {
            let spec = kernel.resolve(real_rep.reps())?;
            (mmd2_biased(&spec, &real_rep, &syn_rep)?, mmd2_grad_syn(&spec, &real_rep, &syn_rep)?)
        }
    };
    let moments = if want_moments && real_rep.len() >= 2 && syn_rep.len() >= 2 {
        Some(MomentReport::compute(&real_rep, &syn_rep)?)
    } else {
        None
    };
    let grad_expanded = tape.backward_inputs(&grad_rep.cast())?.cast::<f64>();
    let grad = factor_expand_backward(&grad_expanded, factor, upsample)?;
    Ok(StepOutcome { loss, grad, moments })
}

/// One logged class step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub iteration: usize,
    pub class: usize,
    pub loss: f64,
    pub moments: Option<MomentReport>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct CondenseOutput {
    pub set: SyntheticSet,
    pub log: Vec<MetricRow>,
}

/// Runs condensation from the configured initialization.
pub fn condense(dataset: &LabeledDataset, config: &CondenseConfig, mode: LossMode) -> Result<CondenseOutput> {
    condense_with(dataset, config, mode, |_| {})
}

/// [`condense`] with a callback invoked on every metric row as it is
/// produced.
pub fn condense_with(
    dataset: &LabeledDataset,
    config: &CondenseConfig,
    mode: LossMode,
    on_row: impl FnMut(&MetricRow),
) -> Result<CondenseOutput> {
    config.validate()?;
    if dataset.input_shape() != config.arch.input {
        return Err(Error::shape(format!(
            "dataset images are {:?} but the encoder expects {:?}",
            dataset.input_shape(),
            config.arch.input
        )));
    }
    let root = RngState::new(config.seed);
    let init = init_synthetic(dataset, config.ipc, config.factor, config.init, &root)?;
    match config.precision {
        Precision::F32 => run::<f32>(dataset, config, mode, init, &root, on_row),
        Precision::F64 => run::<f64>(dataset, config, mode, init, &root, on_row),
    }
}

fn run<T: Scalar>(
    dataset: &LabeledDataset,
    config: &CondenseConfig,
    mode: LossMode,
    mut set: SyntheticSet,
    root: &RngState,
    mut on_row: impl FnMut(&MetricRow),
) -> Result<CondenseOutput> {
    let start = Instant::now();
    let mut log = Vec::with_capacity(config.iterations * dataset.num_classes());
    let mut encoder: Option<EncoderParams<T>> = None;
    let class_len = set.class_len();
    for it in 0..config.iterations {
        if it % config.ipm == 0 {
            let seed = root.split(Purpose::Encoder, &[(it / config.ipm) as u64]);
            encoder = Some(init_encoder(&config.arch, &seed)?.cast());
        }
        let enc = encoder.as_ref().expect("encoder drawn at iteration 0");
        let snapshot = config.snapshot_every > 0
            && (it % config.snapshot_every == 0 || it + 1 == config.iterations);
        for class in 0..dataset.num_classes() {
            let batch_rng = root.split(Purpose::RealBatch, &[it as u64, class as u64]);
            let real = sample_class_batch(dataset, class, config.real_batch, &batch_rng)?.cast::<T>();
            let syn = set.class_images(class);
            let step = matching_step(enc, &real, &syn, config.factor, config.upsample, &config.kernel, mode, snapshot)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::NonFiniteLoss { iteration: it, class },
                    other => other,
                })?;
            if !step.loss.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: it, class });
            }
            let lr = config.lr;
            let slot = &mut set.images.data_mut()[class * class_len..][..class_len];
            for (s, g) in slot.iter_mut().zip(step.grad.data()) {
                *s -= lr * g;
            }
            let row = MetricRow {
                iteration: it,
                class,
                loss: step.loss,
                moments: step.moments,
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            on_row(&row);
            log.push(row);
        }
    }
    set.images.ensure_finite("synthetic update")?;
    Ok(CondenseOutput { set, log })
}

/// Order 1/2/3 moment distances between each class's real images and its
/// expanded synthetic images, averaged over classes and over `encoders`
/// freshly initialized encoders (encoder `e` uses
/// `RngState::new(seed).split(Diagnostic, [e])`).
pub fn moment_diagnostics(
    dataset: &LabeledDataset,
    set: &SyntheticSet,
    arch: &EncoderArch,
    encoders: usize,
    seed: u64,
    upsample: Upsample,
    precision: Precision,
) -> Result<MomentReport> {
    match precision {
        Precision::F32 => diagnostics::<f32>(dataset, set, arch, encoders, seed, upsample),
        Precision::F64 => diagnostics::<f64>(dataset, set, arch, encoders, seed, upsample),
    }
}

fn diagnostics<T: Scalar>(
    dataset: &LabeledDataset,
    set: &SyntheticSet,
    arch: &EncoderArch,
    encoders: usize,
    seed: u64,
    upsample: Upsample,
) -> Result<MomentReport> {
    if encoders == 0 {
        return Err(Error::invalid("moment diagnostics need at least one encoder"));
    }
    if set.num_classes() != dataset.num_classes() {
        return Err(Error::shape("synthetic set and dataset have different class counts"));
    }
    let root = RngState::new(seed);
    let mut reports = Vec::with_capacity(encoders * set.num_classes());
    for e in 0..encoders {
        let params = init_encoder(arch, &root.split(Purpose::Diagnostic, &[e as u64]))?.cast::<T>();
        for c in 0..set.num_classes() {
            let real = RepBatch::real(params.represent(&dataset.class_images(c).cast())?.cast())?;
            let syn = RepBatch::synthetic(params.represent(&set.expanded_class(c, upsample)?.cast())?.cast())?;
            reports.push(MomentReport::compute(&real, &syn)?);
        }
    }
    Ok(MomentReport::average(&reports))
}
