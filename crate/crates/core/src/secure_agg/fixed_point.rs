use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FRAC_BITS: u32 = 20;

/// Real vector carried as two's-complement words in the ring `Z / 2^64`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointVector {
    pub words: Vec<u64>,
    pub frac_bits: u32,
}

pub(crate) fn check_frac_bits(frac_bits: u32) -> Result<()> {
    if frac_bits == 0 || frac_bits >= 62 {
        return Err(Error::Range(format!(
            "fractional bits must lie in [1, 61], got {frac_bits}"
        )));
    }
    Ok(())
}

/// Largest magnitude (exclusive) representable with `frac_bits` fractional bits.
pub fn max_magnitude(frac_bits: u32) -> f64 {
    2f64.powi(63 - frac_bits as i32)
}

/// `word_i = round(v_i 2^f) mod 2^64`.
pub fn encode_fixed(v: &[f64], frac_bits: u32) -> Result<FixedPointVector> {
    check_frac_bits(frac_bits)?;
    let scale = 2f64.powi(frac_bits as i32);
    let limit = max_magnitude(frac_bits);
    let words = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if !x.is_finite() || x.abs() >= limit {
                return Err(Error::Range(format!(
                    "coordinate {i} = {x} outside the fixed-point range (|x| < 2^{})",
                    63 - frac_bits
                )));
            }
            Ok((x * scale).round() as i64 as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FixedPointVector { words, frac_bits })
}

/// `v_i = word_i 2^-f`, reading each word as a signed integer.
pub fn decode_fixed(v: &FixedPointVector) -> Vec<f64> {
    let inv = 2f64.powi(-(v.frac_bits as i32));
    v.words.iter().map(|&w| w as i64 as f64 * inv).collect()
}

pub(crate) fn add_assign(acc: &mut [u64], other: &[u64]) {
    for (a, &b) in acc.iter_mut().zip(other) {
        *a = a.wrapping_add(b);
    }
}
