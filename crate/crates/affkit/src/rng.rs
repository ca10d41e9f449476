//! Seeded sampling helpers shared by the target-assignment and RoI-sampling
//! code. Everything routes through ChaCha so results are stable across
//! platforms.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Choose `k` items from `pool` without replacement, preserving determinism
/// under the rng. The selection is returned in ascending order.
pub(crate) fn choose(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if pool.len() <= k {
        return pool.to_vec();
    }
    let mut picked: Vec<usize> = pool.choose_multiple(rng, k).copied().collect();
    picked.sort_unstable();
    picked
}

/// Derive a distinct stream seed for a sub-task.
pub(crate) fn substream(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer over seed ^ tag keeps substreams uncorrelated
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
