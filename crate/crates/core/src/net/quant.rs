//! Symmetric per-layer fixed-point quantization.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Bitwidths accepted by [`quantize`].
pub const QUANT_BITS: core::ops::RangeInclusive<u8> = 2..=8;

/// Inclusive two's-complement range `[-2^(b-1), 2^(b-1) - 1]`.
#[inline]
pub const fn int_range(bitwidth: u8) -> (i32, i32) {
    let half = 1i32 << (bitwidth - 1);
    (-half, half - 1)
}

pub(crate) fn check_bitwidth(bitwidth: u8, range: core::ops::RangeInclusive<u8>) -> Result<()> {
    if range.contains(&bitwidth) {
        Ok(())
    } else {
        Err(Error::Bitwidth {
            bitwidth,
            min: *range.start(),
            max: *range.end(),
        })
    }
}

/// Quantizes `weights` to `bitwidth`-bit signed integers.
///
/// `scale = max|w| / (2^(b-1) - 1)` (or 1 for an all-zero tensor); each
/// element becomes `round(w / scale)` with ties away from zero, clamped to the
/// two's-complement range.
pub fn quantize(weights: &[f64], bitwidth: u8) -> Result<(Vec<i8>, f64)> {
    check_bitwidth(bitwidth, QUANT_BITS)?;
    let mut max_abs = 0.0f64;
    for (index, w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(Error::NonFinite { index });
        }
        max_abs = max_abs.max(w.abs());
    }
    let (lo, hi) = int_range(bitwidth);
    let scale = if max_abs == 0.0 {
        1.0
    } else {
        max_abs / hi as f64
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Invalid(format!(
            "degenerate quantization scale {scale}"
        )));
    }
    let q = weights
        .iter()
        .map(|&w| (libm::round(w / scale) as i32).clamp(lo, hi) as i8)
        .collect();
    Ok((q, scale))
}

/// Elementwise `scale * q`.
pub fn dequantize_values(q: &[i8], scale: f64) -> Vec<f64> {
    q.iter().map(|&v| scale * v as f64).collect()
}

/// Inverts bit `bit` of `value` read as a `bitwidth`-bit two's-complement
/// integer and sign-extends the result back to `i8`.
#[inline]
pub fn flip_value_bit(value: i8, bitwidth: u8, bit: u8) -> i8 {
    let mask: u8 = if bitwidth == 8 {
        0xFF
    } else {
        (1u8 << bitwidth) - 1
    };
    let raw = (value as u8 & mask) ^ (1u8 << bit);
    sign_extend(raw, bitwidth)
}

/// Sign-extends the low `bitwidth` bits of `raw`.
#[inline]
pub fn sign_extend(raw: u8, bitwidth: u8) -> i8 {
    let shift = 8 - bitwidth as u32;
    ((raw << shift) as i8) >> shift
}
