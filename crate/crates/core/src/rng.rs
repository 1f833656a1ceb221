//! Seeded randomness. Every generator in the crate is a SplitMix64 stream so
//! runs are reproducible from a single `u64`.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

pub type SeededRng = SplitMix64;

pub fn seeded(seed: u64) -> SeededRng {
    SplitMix64::seed_from_u64(seed)
}

/// Independent stream for item `index` under a base seed.
pub fn substream(seed: u64, index: u64) -> SeededRng {
    // Decorrelate (seed, index) pairs through one SplitMix64 step on each.
    let mut base = SplitMix64::seed_from_u64(seed);
    let a: u64 = base.random();
    SplitMix64::seed_from_u64(a ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// `n` draws from `uniform(-1/sqrt(fan), 1/sqrt(fan))`, rounded through
/// `f32` so the values survive a weights-file round trip unchanged.
pub fn uniform_init(rng: &mut SeededRng, n: usize, fan: usize) -> Vec<f64> {
    let bound = 1.0 / (fan.max(1) as f64).sqrt();
    (0..n)
        .map(|_| rng.random_range(-bound..bound) as f32 as f64)
        .collect()
}

/// FNV-1a hash of a tensor name, used to give every named tensor its own stream.
pub fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Seeded `uniform(-1/sqrt(fan), 1/sqrt(fan))` values for a named tensor.
pub fn named_init(seed: u64, name: &str, n: usize, fan: usize) -> Vec<f64> {
    uniform_init(&mut substream(seed, name_hash(name)), n, fan)
}
