//! Counter-style stream derivation. Every random object (subject path,
//! random effect, replicate) draws from a ChaCha stream keyed by the plan
//! seed plus structural indices, so execution order and worker count never
//! change the results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates nearby keys.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a seed with a sequence of indices into a single stream key.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(seed ^ 0x6a09_e667_f3bc_c908);
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

/// Independent RNG stream for (seed, indices).
pub fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, parts))
}
