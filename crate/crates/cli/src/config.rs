//! Flat run configuration, loadable from TOML and overridable per flag.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use m3d_core::condenser::{CondenseConfig, InitMode, LossMode, Precision, Upsample};
use m3d_core::encoder::{EncoderArch, InputShape};
use m3d_core::evalharness::TrainConfig;
use m3d_core::kernels::{Bandwidth, KernelChoice};

use crate::error::{CliError, CliResult};

/// Environment variable naming the dataset root directory.
pub const DATA_ROOT_ENV: &str = "M3D_DATA_ROOT";

macro_rules! run_config {
    ($( $(#[doc = $doc:literal])* $(#[arg($($arg:tt)*)])? $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        /// Every knob of a run. Unknown keys in a config file are rejected.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct RunConfig {
            $( $(#[doc = $doc])* pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $( $field: $default, )* }
            }
        }

        /// One optional flag per [`RunConfig`] field.
        #[derive(Debug, Clone, Default, clap::Args)]
        pub struct Overrides {
            $( $(#[doc = $doc])* #[arg(long $(, $($arg)*)?)] pub $field: Option<$ty>, )*
        }

        impl Overrides {
            pub fn apply(&self, cfg: &mut RunConfig) {
                $( if let Some(v) = &self.$field { cfg.$field = v.clone(); } )*
            }
        }
    };
}

run_config! {
    /// mnist, cifar10 or toy.
    dataset: String = "mnist".into(),
    /// Dataset root; empty means the environment variable, then ./data.
    data_root: String = String::new(),
    /// Training examples kept per class (0 keeps all; toy uses 200).
    per_class: usize = 0,
    /// Test examples kept per class (0 keeps all; toy uses 200).
    test_per_class: usize = 0,
    /// Seed of the generated toy mixture.
    data_seed: u64 = 0,
    /// Directory receiving the echoed config, checkpoint and CSV files.
    out_dir: String = "runs/latest".into(),
    /// convnet3 or mlp2.
    arch: String = "convnet3".into(),
    width: usize = 128,
    ipc: usize = 10,
    iterations: usize = 2000,
    /// Iterations per randomly initialized encoder.
    ipm: usize = 5,
    lr: f64 = 1.0,
    real_batch: usize = 256,
    /// m3d or dm.
    loss: String = "m3d".into(),
    /// gaussian, linear or polynomial.
    kernel: String = "gaussian".into(),
    /// Gaussian bandwidth; 0 selects the median heuristic.
    bandwidth: f64 = 0.0,
    poly_c: f64 = 1.0,
    poly_d: u32 = 2,
    factor: usize = 2,
    /// bilinear or nearest.
    upsample: String = "bilinear".into(),
    /// real or noise.
    init: String = "real".into(),
    /// f32 or f64 encoder arithmetic.
    precision: String = "f64".into(),
    /// Moment distances are logged every this many iterations (0 disables).
    snapshot_every: usize = 100,
    seed: u64 = 0,
    eval_epochs: usize = 300,
    eval_batch_size: usize = 64,
    eval_lr: f64 = 0.01,
    /// Fractions of the epoch budget at which the learning rate drops.
    #[arg(value_delimiter = ',')]
    eval_decay_at: Vec<f64> = vec![2.0 / 3.0, 5.0 / 6.0],
    eval_decay_factor: f64 = 0.2,
    eval_momentum: f64 = 0.9,
    eval_weight_decay: f64 = 5e-4,
    /// Evaluation repeats.
    repeats: usize = 10,
    /// Fresh encoders averaged by the moments command.
    moment_encoders: usize = 10,
    /// Seeds per cell of an ablation sweep.
    ablate_seeds: usize = 1,
    /// Values swept by `ablate --axis ipm`.
    #[arg(value_delimiter = ',')]
    ipm_values: Vec<usize> = vec![1, 5, 10],
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Defaults, then the file, then flags; the data root is filled in and
    /// every field is checked.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        overrides.apply(&mut cfg);
        if cfg.data_root.is_empty() {
            cfg.data_root = std::env::var(DATA_ROOT_ENV).unwrap_or_else(|_| "data".into());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !matches!(self.dataset.as_str(), "mnist" | "cifar10" | "toy") {
            return Err(CliError::config(format!("unknown dataset {:?}", self.dataset)));
        }
        if !matches!(self.arch.as_str(), "convnet3" | "mlp2") {
            return Err(CliError::config(format!("unknown arch {:?}", self.arch)));
        }
        self.loss_mode()?;
        self.kernel_choice()?;
        self.condense_config(InputShape::new(1, 8, 8))?;
        self.train_config()?.validate()?;
        if self.moment_encoders == 0 || self.ablate_seeds == 0 {
            return Err(CliError::config("moment_encoders and ablate_seeds must be at least 1"));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    pub fn encoder_arch(&self, input: InputShape) -> CliResult<EncoderArch> {
        let arch = match self.arch.as_str() {
            "convnet3" => EncoderArch::convnet3(input, self.width),
            "mlp2" => EncoderArch::mlp2(input, self.width),
            other => return Err(CliError::config(format!("unknown arch {other:?}"))),
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn loss_mode(&self) -> CliResult<LossMode> {
        self.loss.parse().map_err(CliError::from)
    }

    pub fn kernel_choice(&self) -> CliResult<KernelChoice> {
        let k = kernel_by_name(&self.kernel, self)?;
        if let KernelChoice::Gaussian(Bandwidth::Fixed(l)) = k {
            if !(l > 0.0 && l.is_finite()) {
                return Err(CliError::config("bandwidth must be positive (0 selects the median heuristic)"));
            }
        }
        Ok(k)
    }

    pub fn precision(&self) -> CliResult<Precision> {
        self.precision.parse().map_err(CliError::from)
    }

    pub fn upsample(&self) -> CliResult<Upsample> {
        self.upsample.parse().map_err(CliError::from)
    }

    /// Condensation settings for images of the given shape. Input-shape
    /// checks on the architecture happen once the data is known.
    pub fn condense_config(&self, input: InputShape) -> CliResult<CondenseConfig> {
        let arch = match self.arch.as_str() {
            "convnet3" => EncoderArch::convnet3(input, self.width),
            _ => EncoderArch::mlp2(input, self.width),
        };
        let mut c = CondenseConfig::new(arch, self.ipc);
        c.iterations = self.iterations;
        c.ipm = self.ipm;
        c.lr = self.lr;
        c.real_batch = self.real_batch;
        c.kernel = self.kernel_choice()?;
        c.factor = self.factor;
        c.upsample = self.upsample()?;
        c.init = self.init.parse::<InitMode>()?;
        c.precision = self.precision()?;
        c.snapshot_every = self.snapshot_every;
        c.seed = self.seed;
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.eval_epochs,
            batch_size: self.eval_batch_size,
            lr: self.eval_lr,
            decay_at: self.eval_decay_at.clone(),
            decay_factor: self.eval_decay_factor,
            momentum: self.eval_momentum,
            weight_decay: self.eval_weight_decay,
            repeats: self.repeats,
            seed: self.seed,
            precision: self.precision()?,
        })
    }
}

/// Kernel named `name`, with bandwidth and polynomial settings from `cfg`.
pub fn kernel_by_name(name: &str, cfg: &RunConfig) -> CliResult<KernelChoice> {
    Ok(match name {
        "gaussian" if cfg.bandwidth == 0.0 => KernelChoice::Gaussian(Bandwidth::Median),
        "gaussian" => KernelChoice::Gaussian(Bandwidth::Fixed(cfg.bandwidth)),
        "linear" => KernelChoice::Linear,
        "polynomial" => KernelChoice::Polynomial { c: cfg.poly_c, d: cfg.poly_d },
        other => return Err(CliError::config(format!("unknown kernel {other:?}"))),
    })
}
