//! Dataset lookup under the data root.

use std::path::{Path, PathBuf};

use m3d_core::data::{gen_mixture, load_cifar_binary, load_idx, LabeledDataset, MixtureSpec, NormStats, StatsMode};
use m3d_core::numerics::RngState;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Per-class size of the generated toy splits when none is configured.
pub const TOY_PER_CLASS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn require(path: PathBuf) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::io(format!(
            "{} not found (set data_root or {}; scripts/fetch_mnist.sh downloads MNIST)",
            path.display(),
            crate::config::DATA_ROOT_ENV
        )))
    }
}

/// Raw (unnormalized) split of the configured dataset.
pub fn load_raw(cfg: &RunConfig, split: Split) -> CliResult<LabeledDataset> {
    let root = Path::new(&cfg.data_root);
    let keep = match split {
        Split::Train => cfg.per_class,
        Split::Test => cfg.test_per_class,
    };
    let per_class = (keep > 0).then_some(keep);
    let ds = match cfg.dataset.as_str() {
        "mnist" => {
            let prefix = if split == Split::Train { "train" } else { "t10k" };
            let dir = root.join("mnist");
            load_idx(
                require(dir.join(format!("{prefix}-images-idx3-ubyte")))?,
                require(dir.join(format!("{prefix}-labels-idx1-ubyte")))?,
                per_class,
            )?
        }
        "cifar10" => {
            let dir = root.join("cifar-10-batches-bin");
            let files: Vec<PathBuf> = match split {
                Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
                Split::Test => vec![dir.join("test_batch.bin")],
            };
            let files = files.into_iter().map(require).collect::<CliResult<Vec<_>>>()?;
            load_cifar_binary(&files, per_class)?
        }
        "toy" => {
            let seed = cfg.data_seed.wrapping_add(u64::from(split == Split::Test));
            gen_mixture(&MixtureSpec::toy(), per_class.unwrap_or(TOY_PER_CLASS), &RngState::new(seed))?
        }
        other => return Err(CliError::config(format!("unknown dataset {other:?}"))),
    };
    Ok(ds)
}

/// Training split normalized with its own statistics.
pub fn load_train(cfg: &RunConfig) -> CliResult<LabeledDataset> {
    Ok(load_raw(cfg, Split::Train)?.normalize(StatsMode::Compute)?)
}

/// Test split normalized with `stats` (left raw when `None`).
pub fn load_test(cfg: &RunConfig, stats: Option<&NormStats>) -> CliResult<LabeledDataset> {
    let raw = load_raw(cfg, Split::Test)?;
    Ok(match stats {
        Some(s) => raw.normalize(StatsMode::Supplied(s.clone()))?,
        None => raw,
    })
}
