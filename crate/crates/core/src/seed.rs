//! Derivation of independent RNG streams from a user seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for one `(frame, object)` cell of a seeded process.
pub fn stream(seed: u64, frame: usize, object: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(frame as u64)) ^ object as u64))
}

/// Hash of a pixel coordinate, uniform in `[0, 1)`.
pub fn unit_hash(seed: u64, a: u64, b: u64, c: u64) -> f64 {
    let h = mix(mix(mix(seed ^ mix(a)) ^ b) ^ c);
    (h >> 11) as f64 / (1u64 << 53) as f64
}
