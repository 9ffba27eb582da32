//! Hierarchical seed splitting.
//!
//! Every random stream in an experiment is derived from a root seed and a
//! path of labels (episode, frame, block, purpose). Streams never depend on
//! the order in which other streams were consumed, so parallel execution
//! reproduces the sequential realizations exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a label.
pub fn child_seed(parent: u64, label: u64) -> u64 {
    splitmix64(parent ^ splitmix64(label.wrapping_add(0x51_7CC1_B727_220A)))
}

/// Derive a seed along a path of labels.
pub fn path_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(root, |s, &l| child_seed(s, l))
}

pub fn stream(root: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(path_seed(root, path))
}

/// Stream labels.
pub mod label {
    pub const MOBILITY: u64 = 1;
    pub const PATHS: u64 = 2;
    pub const NLOS: u64 = 3;
    pub const PILOT_NOISE: u64 = 4;
    pub const ESTIMATE_NOISE: u64 = 5;
    pub const SENSING: u64 = 6;
    pub const REFLECTION: u64 = 7;
    pub const INIT: u64 = 8;
    pub const BATCH: u64 = 9;
    pub const TRAIN: u64 = 10;
    pub const VALID: u64 = 11;
    pub const EVAL: u64 = 12;
    pub const BCD: u64 = 13;
}
