//! Software IEEE 754 binary16 conversion.
//!
//! Half precision is emulated: arrays keep `f32` storage and every write is
//! passed through [`quantize_f16`], so stored values are always members of the
//! binary16 value set. Bit-level conversion is only needed on disk.

/// Largest finite binary16 value.
pub const F16_MAX: f32 = 65504.0;

/// Smallest positive binary16 subnormal, 2^-24.
pub const F16_MIN_POSITIVE_SUBNORMAL: f32 = 5.960_464_5e-8;

/// Converts an `f32` to binary16 bits with round-to-nearest-even.
pub fn f32_to_f16_bits(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32;
    let man = bits & 0x007f_ffff;

    if exp == 0xff {
        if man == 0 {
            return sign | 0x7c00;
        }
        // Keep the top payload bits and force the quiet bit.
        return sign | 0x7e00 | (man >> 13) as u16;
    }
    let e = exp - 127;
    if e > 15 {
        return sign | 0x7c00;
    }
    if e >= -14 {
        let half_exp = (e + 15) as u32;
        let h = (sign as u32) | (half_exp << 10) | (man >> 13);
        let rest = man & 0x1fff;
        // A carry out of the mantissa bumps the exponent, up to infinity.
        let rounded = if rest > 0x1000 || (rest == 0x1000 && (h & 1) == 1) {
            h + 1
        } else {
            h
        };
        return rounded as u16;
    }
    if exp == 0 || e < -25 {
        return sign;
    }
    // Subnormal result: the value in units of 2^-24.
    let full = man | 0x0080_0000;
    let shift = (-(e + 1)) as u32;
    let h = full >> shift;
    let rest = full & ((1 << shift) - 1);
    let halfway = 1 << (shift - 1);
    let rounded = if rest > halfway || (rest == halfway && (h & 1) == 1) {
        h + 1
    } else {
        h
    };
    sign | rounded as u16
}

/// Widens binary16 bits to the exactly equal `f32`.
pub fn f16_bits_to_f32(h: u16) -> f32 {
    let sign = ((h & 0x8000) as u32) << 16;
    let exp = ((h >> 10) & 0x1f) as u32;
    let man = (h & 0x03ff) as u32;
    match exp {
        0 => {
            let magnitude = man as f32 * F16_MIN_POSITIVE_SUBNORMAL;
            if sign != 0 {
                -magnitude
            } else {
                magnitude
            }
        }
        0x1f => f32::from_bits(sign | 0x7f80_0000 | (man << 13)),
        _ => f32::from_bits(sign | ((exp + 127 - 15) << 23) | (man << 13)),
    }
}

/// Rounds `x` to the nearest binary16 value and returns it as `f32`.
///
/// Magnitudes at or above 65520 become infinite, binary16 subnormals are
/// kept, NaN stays NaN.
#[inline]
pub fn quantize_f16(x: f32) -> f32 {
    f16_bits_to_f32(f32_to_f16_bits(x))
}
