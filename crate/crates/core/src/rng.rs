//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a value derived here, so results are reproducible across
//! platforms and independent of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream labels.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream labels used with [`derive_seed`].
pub mod stream {
    pub const POLICY_INIT: u64 = 1;
    pub const VALUE_INIT: u64 = 2;
    pub const VAE_INIT: u64 = 3;
    pub const ROLLOUT: u64 = 4;
    pub const BONUS: u64 = 5;
    pub const VAE_TRAIN: u64 = 6;
    pub const VALUE_TRAIN: u64 = 7;
    pub const PRIOR_TASK: u64 = 8;
    pub const EVAL_TASK: u64 = 9;
    pub const COLLECT: u64 = 10;
    pub const REGRESSOR: u64 = 11;
    pub const PROBE: u64 = 12;
    pub const RUN: u64 = 13;
    pub const PURE: u64 = 14;
}

/// FNV-1a over the bit patterns of a float slice; used to fingerprint parameters.
pub fn fingerprint(values: &[f64]) -> u64 {
    values.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
        v.to_bits()
            .to_le_bytes()
            .iter()
            .fold(h, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
    })
}
