//! Deterministic random substreams.
//!
//! Every stochastic component draws from a ChaCha8 generator whose seed is
//! derived from the master seed and a small tuple of indices (stream tag,
//! iteration, member, ...). Results therefore do not depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep unrelated consumers of the same master seed apart.
pub mod tags {
    pub const ENKF_INIT: u64 = 0x01;
    pub const ENKF_STEP: u64 = 0x02;
    pub const ENKF_SHARED_OBS: u64 = 0x03;
    pub const MCMC_CHAIN: u64 = 0x10;
    pub const GP_RESTART: u64 = 0x20;
    pub const LHS: u64 = 0x30;
    pub const CLASSIFIER: u64 = 0x31;
    pub const SPLIT: u64 = 0x32;
    pub const OBS_NOISE: u64 = 0x40;
    pub const STUDY: u64 = 0x41;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed with a path of indices into a single 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn substream(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, path))
}
