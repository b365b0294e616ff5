//! LEB128-style unsigned varints and zigzag signed varints.
//!
//! Decoding is strict: an encoding with redundant trailing zero groups is
//! rejected so that every value has exactly one representation.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarintError {
    /// Input ended inside a varint.
    Truncated,
    /// More than 64 bits of payload.
    Overflow,
    /// A shorter encoding of the same value exists.
    NonMinimal,
}

pub fn write_uvarint(out: &mut Vec<u8>, mut value: u64) {
    loop {
        let byte = (value & 0x7f) as u8;
        value >>= 7;
        if value == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

pub fn write_svarint(out: &mut Vec<u8>, value: i64) {
    write_uvarint(out, zigzag(value));
}

#[inline]
pub fn zigzag(value: i64) -> u64 {
    ((value << 1) ^ (value >> 63)) as u64
}

#[inline]
pub fn unzigzag(value: u64) -> i64 {
    ((value >> 1) as i64) ^ -((value & 1) as i64)
}

/// Encoded length of `value` in bytes.
pub fn uvarint_len(value: u64) -> usize {
    let bits = 64 - value.leading_zeros() as usize;
    bits.div_ceil(7).max(1)
}

/// Reads one unsigned varint, returning the value and the bytes consumed.
pub fn read_uvarint(input: &[u8]) -> Result<(u64, usize), VarintError> {
    let mut value: u64 = 0;
    for (i, &byte) in input.iter().enumerate() {
        let shift = 7 * i as u32;
        let payload = u64::from(byte & 0x7f);
        if i == 9 && byte > 1 {
            return Err(VarintError::Overflow);
        }
        if i > 9 {
            return Err(VarintError::Overflow);
        }
        value |= payload << shift;
        if byte & 0x80 == 0 {
            if i > 0 && byte == 0 {
                return Err(VarintError::NonMinimal);
            }
            return Ok((value, i + 1));
        }
    }
    Err(VarintError::Truncated)
}

pub fn read_svarint(input: &[u8]) -> Result<(i64, usize), VarintError> {
    read_uvarint(input).map(|(v, n)| (unzigzag(v), n))
}
