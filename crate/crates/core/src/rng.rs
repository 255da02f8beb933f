//! Deterministic random substreams.
//!
//! Every stochastic computation receives its own ChaCha8 stream derived from
//! one master seed and a short path of integers, e.g. `[tag, replicate]` or
//! `[tag, replicate, evaluation]`. The path is folded through SplitMix64, so
//! the same path always yields the same stream no matter which thread asks
//! for it or in which order. Serial and parallel runs therefore agree bit for
//! bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Substream tags used by the library. Callers may use any other values.
pub mod tag {
    pub const SIMULATE: u64 = 1;
    pub const DMF: u64 = 2;
    pub const GA: u64 = 3;
    pub const LOSS: u64 = 4;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a master seed and a path into a 64-bit derived seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn substream(master: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, path))
}
