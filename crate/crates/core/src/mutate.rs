//! Single-step byte-level mutation operators.

use alloc::vec::Vec;

use crate::rng::FuzzRng;

/// Largest magnitude used by 16-bit arithmetic mutations.
pub const ARITH_MAX: u16 = 35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mutation {
    /// Not mutated: an initial seed.
    Seed,
    BitFlip,
    ByteReplace,
    ByteInsert,
    ByteDelete,
    Arith16,
    BlockDuplicate,
    Splice,
}

impl Mutation {
    pub fn as_str(self) -> &'static str {
        match self {
            Mutation::Seed => "seed",
            Mutation::BitFlip => "bitflip",
            Mutation::ByteReplace => "replace",
            Mutation::ByteInsert => "insert",
            Mutation::ByteDelete => "delete",
            Mutation::Arith16 => "arith16",
            Mutation::BlockDuplicate => "dup",
            Mutation::Splice => "splice",
        }
    }
}

pub fn bit_flip(buf: &mut [u8], pos: usize, bit: u8) {
    buf[pos] ^= 1 << (bit & 7);
}

/// Adds `delta` to the little-endian u16 at `pos`, wrapping.
pub fn arith16(buf: &mut [u8], pos: usize, delta: i16) {
    let v = u16::from_le_bytes([buf[pos], buf[pos + 1]]).wrapping_add(delta as u16);
    buf[pos..pos + 2].copy_from_slice(&v.to_le_bytes());
}

/// Applies one randomly chosen operator to a copy of `seed`.
///
/// Operators that cannot apply fall back to a neighbour that can: deleting
/// from a one-byte input inserts instead, growing past `max_len` replaces a
/// byte instead, and so on. The result is never empty and never longer than
/// `max_len`. `pool` supplies splice partners.
pub fn mutate<T: AsRef<[u8]>>(
    seed: &[u8],
    rng: &mut FuzzRng,
    pool: &[T],
    max_len: usize,
) -> (Vec<u8>, Mutation) {
    assert!(!seed.is_empty(), "seeds are non-empty");
    assert!(max_len >= 1);
    let mut out: Vec<u8> = seed[..seed.len().min(max_len)].to_vec();
    let can_grow = out.len() < max_len;
    let op = match rng.below(7) {
        0 => Mutation::BitFlip,
        1 => Mutation::ByteReplace,
        2 => Mutation::ByteInsert,
        3 => Mutation::ByteDelete,
        4 => Mutation::Arith16,
        5 => Mutation::BlockDuplicate,
        _ => Mutation::Splice,
    };
    let op = match op {
        Mutation::ByteDelete if out.len() == 1 => Mutation::ByteInsert,
        Mutation::ByteInsert | Mutation::BlockDuplicate if !can_grow => Mutation::ByteReplace,
        Mutation::Splice if pool.is_empty() => Mutation::ByteReplace,
        other => other,
    };
    // A one-byte insert fallback can still hit the cap.
    let op = if op == Mutation::ByteInsert && !can_grow {
        Mutation::ByteReplace
    } else {
        op
    };

    match op {
        Mutation::BitFlip => {
            let pos = rng.below(out.len());
            let bit = rng.below(8) as u8;
            bit_flip(&mut out, pos, bit);
        }
        Mutation::ByteReplace => {
            let pos = rng.below(out.len());
            out[pos] = rng.byte();
        }
        Mutation::ByteInsert => {
            let pos = rng.below(out.len() + 1);
            let b = rng.byte();
            out.insert(pos, b);
        }
        Mutation::ByteDelete => {
            let pos = rng.below(out.len());
            out.remove(pos);
        }
        Mutation::Arith16 => {
            let delta = 1 + rng.below(ARITH_MAX as usize) as i16;
            let delta = if rng.below(2) == 0 { delta } else { -delta };
            if out.len() >= 2 {
                let pos = rng.below(out.len() - 1);
                arith16(&mut out, pos, delta);
            } else {
                out[0] = out[0].wrapping_add(delta as u8);
            }
        }
        Mutation::BlockDuplicate => {
            let start = rng.below(out.len());
            let room = max_len - out.len();
            let blen = 1 + rng.below((out.len() - start).min(room));
            let at = rng.below(out.len() + 1);
            let block: Vec<u8> = out[start..start + blen].to_vec();
            out.splice(at..at, block);
        }
        Mutation::Splice => {
            let other = pool[rng.below(pool.len())].as_ref();
            let cut = 1 + rng.below(out.len());
            out.truncate(cut);
            if !other.is_empty() {
                let from = rng.below(other.len());
                let take = (other.len() - from).min(max_len - out.len());
                out.extend_from_slice(&other[from..from + take]);
            }
        }
        Mutation::Seed => unreachable!(),
    }
    debug_assert!(!out.is_empty() && out.len() <= max_len);
    (out, op)
}
