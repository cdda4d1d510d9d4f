//! Synthetic-set checkpoints: a plain-text header followed by the raw
//! little-endian f64 pixels.
//!
//! ```text
//! m3d-checkpoint 1
//! arch convnet3:w128:1x28x28
//! dataset mnist
//! classes 10
//! ipc 10
//! factor 2
//! dims 100 1 28 28
//! mean 0.1307
//! std 0.3081
//! seed 0
//! iterations 2000
//! payload f64le 627200
//! END
//! ```
//! `mean`/`std` read `none` for unnormalized sets.

use std::path::Path;

use m3d_core::condenser::SyntheticSet;
use m3d_core::data::NormStats;
use m3d_core::encoder::EncoderArch;
use m3d_core::numerics::Tensor;

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "m3d-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: EncoderArch,
    pub dataset: String,
    pub seed: u64,
    pub iterations: usize,
    pub set: SyntheticSet,
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let set = &self.set;
        let dims = set.images().shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ");
        let (mean, std) = match set.stats() {
            Some(s) => (join(&s.mean), join(&s.std)),
            None => ("none".into(), "none".into()),
        };
        let header = format!(
            "{MAGIC} {FORMAT_VERSION}\narch {}\ndataset {}\nclasses {}\nipc {}\nfactor {}\ndims {dims}\nmean {mean}\nstd {std}\nseed {}\niterations {}\npayload f64le {}\nEND\n",
            self.arch,
            self.dataset,
            set.num_classes(),
            set.ipc(),
            set.factor(),
            self.seed,
            self.iterations,
            set.images().len() * 8,
        );
        let mut out = header.into_bytes();
        out.reserve(set.images().len() * 8);
        for v in set.images().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let bad = |m: &str| CliError::io(format!("malformed checkpoint: {m}"));
        let end = find(bytes, b"\nEND\n").ok_or_else(|| bad("no END line"))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
        let payload = &bytes[end + 5..];
        let mut lines = header.lines();
        let first = lines.next().unwrap_or_default();
        let version = first
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| bad("missing magic line"))?;
        if version != FORMAT_VERSION {
            return Err(CliError::config(format!(
                "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let mut field = |key: &str| -> CliResult<String> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {key}")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| bad(&format!("expected {key}, found {line:?}")))
        };
        fn num<T: std::str::FromStr>(s: &str, key: &str) -> CliResult<T> {
            s.parse().map_err(|_| CliError::io(format!("malformed checkpoint: bad {key} {s:?}")))
        }
        let arch: EncoderArch = field("arch")?.parse()?;
        let dataset = field("dataset")?;
        let classes: usize = num(&field("classes")?, "classes")?;
        let ipc: usize = num(&field("ipc")?, "ipc")?;
        let factor: usize = num(&field("factor")?, "factor")?;
        let dims: Vec<usize> = field("dims")?.split(' ').map(|d| num(d, "dims")).collect::<CliResult<_>>()?;
        let mean = field("mean")?;
        let std = field("std")?;
        let seed: u64 = num(&field("seed")?, "seed")?;
        let iterations: usize = num(&field("iterations")?, "iterations")?;
        let len: usize = num(
            field("payload")?.strip_prefix("f64le ").ok_or_else(|| bad("payload must be f64le"))?,
            "payload",
        )?;
        if payload.len() != len {
            return Err(bad(&format!("payload has {} bytes, header says {len}", payload.len())));
        }
        let stats = match (mean.as_str(), std.as_str()) {
            ("none", "none") => None,
            _ => Some(NormStats {
                mean: mean.split(' ').map(|v| num(v, "mean")).collect::<CliResult<_>>()?,
                std: std.split(' ').map(|v| num(v, "std")).collect::<CliResult<_>>()?,
            }),
        };
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let images = Tensor::new(dims, data).map_err(|e| bad(&e.to_string()))?;
        let set = SyntheticSet::new(images, factor, stats)?;
        if set.num_classes() != classes || set.ipc() != ipc {
            return Err(bad("classes/ipc disagree with dims"));
        }
        if set.input_shape() != arch.input {
            return Err(bad("image dims disagree with the architecture"));
        }
        Ok(Checkpoint { arch, dataset, seed, iterations, set })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}
