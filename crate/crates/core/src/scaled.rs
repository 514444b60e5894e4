//! Binary mantissa/exponent helpers for quantities outside the f64 range.

/// Splits a finite `x > 0` into `(m, e)` with `x = m·2^e`, `m ∈ [0.5, 1)`.
pub(crate) fn frexp(x: f64) -> (f64, i64) {
    let (x, bias) = if x < f64::MIN_POSITIVE {
        (x * 2f64.powi(64), -64)
    } else {
        (x, 0)
    };
    let bits = x.to_bits();
    let e = ((bits >> 52) & 0x7ff) as i64 - 1022;
    let m = f64::from_bits((bits & !(0x7ff << 52)) | (1022 << 52));
    (m, e + bias)
}

/// `2^d` for `d` in the normal exponent range, 0 below it.
pub(crate) fn pow2(d: i64) -> f64 {
    if d < -1022 {
        0.0
    } else {
        f64::from_bits(((d.min(1023) + 1023) as u64) << 52)
    }
}

/// `m·2^e` in plain f64, saturating to 0 or infinity.
pub(crate) fn ldexp(m: f64, e: i64) -> f64 {
    if m == 0.0 {
        return 0.0;
    }
    let e = e.clamp(-3000, 3000);
    let half = e / 2;
    m * pow2(half) * pow2(e - half)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frexp_round_trips() {
        for x in [1.0, 0.75, 3.0e-310, 1.7e308, 12345.678] {
            let (m, e) = frexp(x);
            assert!((0.5..1.0).contains(&m));
            assert_eq!(ldexp(m, e), x);
        }
    }
}
