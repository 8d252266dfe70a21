//! Independent random streams keyed by a base seed and a tuple of tags, so
//! draws never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep streams for different uses apart.
pub mod purpose {
    pub const PRIOR: u64 = 1;
    pub const OBS_PERTURBATION: u64 = 2;
    pub const GAUGE_NOISE: u64 = 3;
    pub const WSR_NOISE: u64 = 4;
    pub const DH_REDRAW: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds tags into a seed; distinct tag tuples give unrelated keys.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}
