//! Deterministic RNG streams derived from a run seed.
//!
//! Every random draw in training is keyed by `(seed, purpose, iteration,
//! example)`, so a run resumed from a checkpoint draws exactly what the
//! uninterrupted run would have drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    ChainInit = 2,
    Langevin = 3,
    Shuffle = 4,
    Reparam = 5,
    Synth = 6,
    Analysis = 7,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive(seed: u64, stream: Stream, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(seed ^ splitmix(stream as u64)) ^ a) ^ b)
}

pub fn rng(seed: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream, a, b))
}
