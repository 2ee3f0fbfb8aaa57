//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`SeededRng`], a ChaCha8
//! stream keyed by a 64-bit seed. Sub-streams for individual layers, clusters
//! or rounds are derived with [`derive_seed`] so results never depend on the
//! order in which independent tasks run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Identifies the generator family recorded next to a seed in model files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Generator {
    ChaCha8,
}

impl Generator {
    pub const fn id(self) -> &'static str {
        match self {
            Generator::ChaCha8 => "chacha8",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "chacha8" => Some(Generator::ChaCha8),
            _ => None,
        }
    }
}

/// Generator identity plus the seed that produced a set of parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedInfo {
    pub generator: Generator,
    pub seed: u64,
}

impl SeedInfo {
    pub const fn chacha8(seed: u64) -> Self {
        SeedInfo {
            generator: Generator::ChaCha8,
            seed,
        }
    }
}

/// SplitMix64 finalizer used to decorrelate derived seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(seed), |acc, &i| mix64(acc ^ mix64(i)))
}

pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_info(info: SeedInfo) -> Self {
        match info.generator {
            Generator::ChaCha8 => Self::new(info.seed),
        }
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.random::<bool>()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
