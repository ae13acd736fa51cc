//! Deterministic seed derivation.
//!
//! Every randomized component (mix noise per session, forest trees, CV fold
//! shuffles, synthetic users) draws from its own stream derived from one
//! master seed, so results do not depend on evaluation order or parallelism.

/// SplitMix64 finalizer. Bijective on u64, good avalanche.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from a master seed and a salt.
///
/// Identical `(master, salt)` pairs always yield the same sub-seed; distinct
/// salts yield statistically independent streams.
pub fn derive_seed(master: u64, salt: u64) -> u64 {
    splitmix64(master ^ splitmix64(salt))
}

/// Stable 64-bit FNV-1a hash of a string, for salting seeds with identifiers.
///
/// Implemented here rather than via `std::hash` so the mapping is fixed by
/// this crate, not by the standard library's unspecified hasher.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic_and_salt_sensitive() {
        assert_eq!(derive_seed(7, 1), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 1), derive_seed(7, 2));
        assert_ne!(derive_seed(7, 1), derive_seed(8, 1));
    }

    #[test]
    fn hash_str_is_stable() {
        // Frozen FNV-1a reference values.
        assert_eq!(hash_str(""), 0xCBF2_9CE4_8422_2325);
        assert_eq!(hash_str("a"), 0xAF63_DC4C_8601_EC8C);
        assert_ne!(hash_str("u1/s1"), hash_str("u1/s2"));
    }
}
