//! Fixed-width index streams, LSB-first within each byte.

use crate::error::{Error, Result};

pub fn packed_len(n: usize, bits: u32) -> usize {
    (n * bits as usize).div_ceil(8)
}

/// Packs `indices` at `bits` bits each. Every index must fit in `bits`.
pub fn pack_indices(indices: &[u32], bits: u32) -> Result<Vec<u8>> {
    if !(1..=32).contains(&bits) {
        return Err(Error::invalid(format!("cannot pack at {bits} bits")));
    }
    let limit = if bits == 32 { u64::from(u32::MAX) } else { (1u64 << bits) - 1 };
    let mut out = Vec::with_capacity(packed_len(indices.len(), bits));
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    for (i, &v) in indices.iter().enumerate() {
        if u64::from(v) > limit {
            return Err(Error::invalid(format!("index {v} at position {i} does not fit in {bits} bits")));
        }
        acc |= u64::from(v) << filled;
        filled += bits;
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
    Ok(out)
}

/// Inverse of [`pack_indices`]; `bytes` must be exactly the packed length.
pub fn unpack_indices(bytes: &[u8], n: usize, bits: u32) -> Result<Vec<u32>> {
    if !(1..=32).contains(&bits) {
        return Err(Error::invalid(format!("cannot unpack at {bits} bits")));
    }
    if bytes.len() != packed_len(n, bits) {
        return Err(Error::invalid(format!(
            "index stream of {n} × {bits} bits needs {} bytes, got {}",
            packed_len(n, bits),
            bytes.len()
        )));
    }
    let mask = if bits == 32 { u64::from(u32::MAX) } else { (1u64 << bits) - 1 };
    let mut out = Vec::with_capacity(n);
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    let mut src = bytes.iter();
    for _ in 0..n {
        while filled < bits {
            acc |= u64::from(*src.next().expect("length checked")) << filled;
            filled += 8;
        }
        out.push((acc & mask) as u32);
        acc >>= bits;
        filled -= bits;
    }
    Ok(out)
}
