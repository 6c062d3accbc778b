//! Seeded randomness.
//!
//! Every random draw in the simulator comes from a [`SimRng`], which is
//! ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`). ChaCha's output stream is
//! fully specified by its block function, so a given seed produces the same
//! bits on every platform and word size.
//!
//! Seeds for the individual streams (one per node, round and purpose) are
//! derived from the run's master seed with [`derive_seed`], a SplitMix64 fold:
//!
//! ```text
//! h(0)   = mix(master + G)
//! h(k+1) = mix((h(k) ^ part(k)) + G)          G = 0x9E3779B97F4A7C15
//!
//! mix(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!          z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!          return z ^ (z >> 31)
//! ```
//!
//! All arithmetic wraps modulo 2^64.
//!
//! String tags are first folded byte-wise into a `u64` with FNV-1a.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The simulator's portable PRNG.
pub type SimRng = ChaCha8Rng;

/// Build a [`SimRng`] from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the UTF-8 bytes of a purpose tag.
pub fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Fold an arbitrary path of integers into a seed.
pub fn fold_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix_mix(master.wrapping_add(GOLDEN)), |h, &p| {
        splitmix_mix((h ^ p).wrapping_add(GOLDEN))
    })
}

/// Stream seed for `(replica, node, round, purpose)` under a master seed.
pub fn derive_seed(master: u64, replica: u64, node: u64, round: u64, purpose: &str) -> u64 {
    fold_seed(master, &[replica, node, round, tag_hash(purpose)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derived_seeds_are_stable() {
        // Frozen values, computed from the documented fold by a separate
        // implementation. Changing the derivation silently changes every run.
        assert_eq!(derive_seed(0, 0, 0, 0, "init"), 0x9e86_48e2_036b_afe1);
        assert_eq!(derive_seed(42, 0, 1, 2, "train"), 0x5cb6_78db_3380_f51e);
        let a = derive_seed(42, 0, 1, 2, "train");
        let b = derive_seed(42, 0, 2, 1, "train");
        let c = derive_seed(42, 0, 1, 2, "init");
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn chacha_stream_is_frozen() {
        let mut rng = rng_from_seed(7);
        let first = rng.next_u64();
        let mut again = rng_from_seed(7);
        assert_eq!(first, again.next_u64());
        assert_ne!(first, rng_from_seed(8).next_u64());
    }

    #[test]
    fn fnv_matches_reference_vector() {
        // FNV-1a 64 of "a" from the reference test suite.
        assert_eq!(tag_hash("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(tag_hash(""), 0xcbf29ce484222325);
    }
}
