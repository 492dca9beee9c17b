//! IEEE 754 binary16 conversion with round-to-nearest-even.

/// Largest finite binary16 magnitude.
pub const F16_MAX: f32 = 65504.0;

/// Round an `f32` to the nearest binary16 (ties to even). Overflow becomes
/// a signed infinity, NaN stays NaN (quiet), tiny values flush through the
/// subnormal range to signed zero.
pub fn quantize_f16(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32;
    let man = bits & 0x007f_ffff;

    if exp == 0xff {
        return if man == 0 {
            sign | 0x7c00
        } else {
            sign | 0x7e00 | (man >> 13) as u16
        };
    }

    let half_exp = exp - 127 + 15;
    if half_exp >= 0x1f {
        return sign | 0x7c00;
    }

    if half_exp <= 0 {
        // Subnormal result (or zero). The implicit bit becomes explicit.
        let shift = 14 - half_exp;
        if shift > 24 {
            return sign;
        }
        let full = man | 0x0080_0000;
        let mut half_man = full >> shift;
        let round_bit = 1u32 << (shift - 1);
        if full & round_bit != 0 && full & (3 * round_bit - 1) != 0 {
            half_man += 1;
        }
        return sign | half_man as u16;
    }

    let half_man = (man >> 13) as u16;
    let out = sign | ((half_exp as u16) << 10) | half_man;
    let round_bit = 0x1000u32;
    if man & round_bit != 0 && man & (3 * round_bit - 1) != 0 {
        // Carry may ripple into the exponent, which is the correct result
        // (including rounding up to infinity).
        out + 1
    } else {
        out
    }
}

/// Exact widening of a binary16 pattern to `f32`.
pub fn dequantize_f16(b: u16) -> f32 {
    let sign = ((b & 0x8000) as u32) << 16;
    let exp = ((b >> 10) & 0x1f) as u32;
    let man = (b & 0x03ff) as u32;
    let bits = match (exp, man) {
        (0, 0) => sign,
        (0, _) => {
            // Subnormal: value = man * 2^-24, top set bit at position p.
            let p = 31 - man.leading_zeros();
            let m = (man << (23 - p)) & 0x007f_ffff;
            sign | ((103 + p) << 23) | m
        }
        (0x1f, 0) => sign | 0x7f80_0000,
        (0x1f, _) => sign | 0x7fc0_0000 | (man << 13),
        _ => sign | ((exp + 127 - 15) << 23) | (man << 13),
    };
    f32::from_bits(bits)
}

/// Dequantize for use inside a feature grid: infinities clamp to the
/// largest finite magnitude and NaN reads as zero.
pub fn dequantize_finite(b: u16) -> f32 {
    let v = dequantize_f16(b);
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-F16_MAX, F16_MAX)
    }
}
