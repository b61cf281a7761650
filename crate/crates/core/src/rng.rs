//! Deterministic random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by
//! `(root seed, purpose tag, index)`, so a result depends only on those three
//! numbers and never on call order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RngStream = ChaCha8Rng;

pub mod tag {
    pub const ERASE: u64 = 1;
    pub const CROP: u64 = 2;
    pub const DISTORT: u64 = 3;
    pub const JITTER: u64 = 4;
    pub const FLIP: u64 = 5;
    pub const SYNTH_IDENTITY: u64 = 16;
    pub const SYNTH_POSE: u64 = 17;
    pub const GENERATOR_INIT: u64 = 32;
    pub const DISCRIMINATOR_INIT: u64 = 33;
    pub const BACKBONE_INIT: u64 = 34;
    pub const CLASSIFIER_INIT: u64 = 35;
    pub const EPOCH_ORDER: u64 = 48;
    pub const CLASSIFIER_ORDER: u64 = 49;
    pub const EVAL_OCCLUSION: u64 = 50;
}

pub fn stream(seed: u64, tag: u64, index: u64) -> RngStream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
