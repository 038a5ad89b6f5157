//! Small stable hashing helpers shared by the layers.
//!
//! Everything here must stay bit-stable across platforms and releases: frame
//! generation, type hashes and report digests depend on it.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based hash of `(seed, name, counter, field)`.
pub fn keyed_hash(seed: u64, name: &str, counter: u64, field: &str) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ fnv1a64(name.as_bytes()));
    h = splitmix64(h ^ counter);
    splitmix64(h ^ fnv1a64(field.as_bytes()))
}

/// Maps a hash to a uniform float in `[0, 1)`.
pub fn unit_f64(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Lowercase hex digest of the payload, 16 characters.
pub fn digest_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}
