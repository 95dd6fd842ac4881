//! Seeded randomness. Every stochastic step (weight init, shuffles, noise,
//! baseline permutations) derives its stream from an explicit `u64` seed so
//! whole runs are reproducible byte-for-byte.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent child seed for a named stream and index, e.g. one per epoch
/// or one per corpus image. Keeps parallel per-item RNGs decorrelated while
/// staying a pure function of the run seed.
pub fn child_seed(base: u64, stream: u64, index: u64) -> u64 {
    let z = mix(base.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(stream));
    mix(z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn child_seeds_differ_across_streams_and_indices() {
        let a = child_seed(42, 0, 0);
        let b = child_seed(42, 1, 0);
        let c = child_seed(42, 0, 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
        // and are stable
        assert_eq!(a, child_seed(42, 0, 0));
    }
}
