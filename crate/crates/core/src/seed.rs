//! Fan-out of one user seed into independent per-component streams.
//!
//! `derive(seed, stream)` runs the pair through the SplitMix64 finalizer so
//! that nearby seeds and nearby stream tags give unrelated generators. Every
//! component that draws randomness owns a fixed [`Stream`] tag.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Randomness consumers. The discriminants are part of the reproducibility
/// contract and must not change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Feature-extractor initialization.
    Extractor = 1,
    /// Classifier initialization.
    Classifier = 2,
    /// Critic initialization (pair index is mixed in separately).
    Critic = 3,
    /// Source-validation split.
    Split = 4,
    /// Mini-batch shuffling.
    Batches = 5,
    /// Gradient-penalty interpolation coefficients.
    Interpolation = 6,
    /// Synthetic data generation.
    Data = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476C_E5E4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: Stream) -> u64 {
    derive_indexed(seed, stream, 0)
}

/// Seed for the `index`-th instance of a stream (e.g. one critic per pair).
pub fn derive_indexed(seed: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream as u64)) ^ index)
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream))
}

pub fn rng_indexed(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_indexed(seed, stream, index))
}
