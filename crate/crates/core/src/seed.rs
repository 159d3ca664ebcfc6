//! Seed derivation for independent, reproducible random substreams.
//!
//! Every random stage draws from a ChaCha8 generator whose seed is
//!
//! ```text
//! derive_seed(master, stage, index) = mix(mix(master ^ fnv1a64(stage)) ^ mix(index + GOLDEN))
//! ```
//!
//! where `mix` is the SplitMix64 finalizer and `GOLDEN = 0x9E3779B97F4A7C15`.
//! Work is always partitioned into fixed-size blocks keyed by `index`, so the
//! numbers drawn never depend on how many worker threads consume the blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive_seed(master: u64, stage: &str, index: u64) -> u64 {
    mix(mix(master ^ fnv1a64(stage)) ^ mix(index.wrapping_add(GOLDEN)))
}

/// Generator for block `index` of `stage`.
pub fn substream(master: u64, stage: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stage, index))
}

/// Generator for a two-level key, e.g. (time block, thinning stripe).
pub fn substream2(master: u64, stage: &str, outer: u64, inner: u64) -> ChaCha8Rng {
    substream(derive_seed(master, stage, outer), stage, inner)
}
