//! Stable hashing for checksums and crash buckets.

use core::hash::Hasher;

use fnv::FnvHasher;

/// 64-bit FNV-1a over the concatenation of `parts`.
pub fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(p);
    }
    h.finish()
}
