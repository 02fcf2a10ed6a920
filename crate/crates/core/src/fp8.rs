//! Simulated float8 E5M2 (1 sign, 5 exponent, 2 mantissa bits, bias 15).
//!
//! Only finite values are produced; magnitudes above the largest finite
//! E5M2 value saturate to `±57344`.

pub const E5M2_MAX: f64 = 57344.0;
const MIN_NORMAL_EXP: i32 = -14;
const MANTISSA_BITS: i32 = 2;

/// Encode to the nearest E5M2 value, ties to even mantissa.
pub fn e5m2_encode(v: f64) -> u8 {
    let sign = if v.is_sign_negative() { 0x80u8 } else { 0 };
    if v.is_nan() {
        return 0;
    }
    let mag = e5m2_round_magnitude(v.abs());
    if mag == 0.0 {
        return sign;
    }
    let e = binary_exponent(mag);
    if e < MIN_NORMAL_EXP {
        let mant = (mag / 2f64.powi(MIN_NORMAL_EXP - MANTISSA_BITS)) as u8;
        return sign | mant;
    }
    let mant = (mag / 2f64.powi(e - MANTISSA_BITS)) as u8 - 4;
    sign | (((e + 15) as u8) << 2) | mant
}

pub fn e5m2_decode(byte: u8) -> f64 {
    let sign = if byte & 0x80 != 0 { -1.0 } else { 1.0 };
    let exp = ((byte >> 2) & 0x1f) as i32;
    let mant = (byte & 0x3) as f64;
    let mag = match exp {
        0 => mant * 2f64.powi(MIN_NORMAL_EXP - MANTISSA_BITS),
        31 if mant == 0.0 => f64::INFINITY,
        31 => f64::NAN,
        _ => (4.0 + mant) * 2f64.powi(exp - 15 - MANTISSA_BITS),
    };
    sign * mag
}

/// Round to the E5M2 grid without changing representation.
pub fn e5m2_round(v: f64) -> f64 {
    e5m2_decode(e5m2_encode(v))
}

fn e5m2_round_magnitude(mag: f64) -> f64 {
    if mag == 0.0 {
        return 0.0;
    }
    if !mag.is_finite() {
        return E5M2_MAX;
    }
    let e = binary_exponent(mag).max(MIN_NORMAL_EXP);
    let step = 2f64.powi(e - MANTISSA_BITS);
    let rounded = (mag / step).round_ties_even() * step;
    rounded.min(E5M2_MAX)
}

/// floor(log2(mag)) for positive finite `mag`, read from the f64 encoding.
fn binary_exponent(mag: f64) -> i32 {
    let raw = ((mag.to_bits() >> 52) & 0x7ff) as i32;
    if raw == 0 {
        // f64 subnormal: far below the E5M2 range.
        -1074
    } else {
        raw - 1023
    }
}
