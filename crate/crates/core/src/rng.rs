//! Deterministic random streams.
//!
//! Every consumer derives its own ChaCha stream from the master seed and a
//! counter, so the order in which independent work items run never changes
//! what they draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type DetRng = ChaCha8Rng;

/// Stream ids for the distinct consumers of randomness.
pub mod stream {
    pub const SCENE: u64 = 1;
    pub const PERMUTATIONS: u64 = 2;
    pub const LABEL_NOISE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const BASES: u64 = 5;
    pub const EVAL: u64 = 6;
}

pub fn rng_for(seed: u64, stream: u64) -> DetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream keyed by `(stream, a, b)`, e.g. a view and a frame.
pub fn rng_for_item(seed: u64, stream: u64, a: u64, b: u64) -> DetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (a << 32) ^ b);
    rng
}

pub fn normal(rng: &mut DetRng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn uniform(rng: &mut DetRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
