use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// What a derived random stream is used for. The tag is folded into the
/// child seed, so streams for different purposes never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Encoder,
    RealBatch,
    SyntheticInit,
    Mixture,
    Selection,
    Shuffle,
    Training,
    Diagnostic,
    Repeat,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Encoder => 0x01,
            Purpose::RealBatch => 0x02,
            Purpose::SyntheticInit => 0x03,
            Purpose::Mixture => 0x04,
            Purpose::Selection => 0x05,
            Purpose::Shuffle => 0x06,
            Purpose::Training => 0x07,
            Purpose::Diagnostic => 0x08,
            Purpose::Repeat => 0x09,
        }
    }
}

/// Seeded ChaCha8 generator.
///
/// Streams are split with [`RngState::split`]: the child seed is
/// `splitmix64` folded over `(seed, purpose tag, indices...)`, each step
/// xoring the next word into the running state before mixing. Children
/// depend only on the parent *seed*, never on how many values the parent has
/// drawn, so e.g. the batch for `(iteration 7, class 3)` is the same no
/// matter what ran before it.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self, purpose: Purpose, indices: &[u64]) -> RngState {
        let mut h = splitmix64(self.seed ^ purpose.tag().rotate_left(56));
        for &i in indices {
            h = splitmix64(h ^ i);
        }
        RngState::new(h)
    }

    /// Draws i.i.d. normal values.
    pub fn gaussian(&mut self, shape: impl Into<Vec<usize>>, mean: f64, std: f64) -> Result<Tensor> {
        if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() {
            return Err(Error::invalid(format!(
                "gaussian draw needs finite mean and std >= 0 (got mean {mean}, std {std})"
            )));
        }
        let shape = shape.into();
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| {
                let z: f64 = self.inner.sample(StandardNormal);
                mean + std * z
            })
            .collect();
        Ok(Tensor::from_parts_unchecked(shape, data))
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// `k` distinct indices from `0..n` in random order (partial Fisher-Yates).
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
