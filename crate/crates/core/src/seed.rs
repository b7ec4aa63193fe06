//! Counter-based seed derivation.
//!
//! Every random stream in a run is keyed by `(master, tag, indices...)`, so
//! adding clients or rounds never shifts the streams that already exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `master` with a sequence of stream coordinates.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c));
    }
    h
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags so different consumers of the same master seed never collide.
pub mod stream {
    pub const DATASET: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const POISON: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const REFERENCE: u64 = 6;
}
