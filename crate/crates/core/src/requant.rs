//! Integer-only rescaling for the INT8 kernels.
//!
//! A real multiplier `m` is stored as a Q31 mantissa and a right shift so that
//! `m ≈ mantissa · 2^-shift`. Applying it to an accumulator is a widening
//! multiply followed by a rounding shift; no float arithmetic is involved.

/// Round to nearest, ties to even.
#[inline]
pub fn round_half_even(x: f32) -> f32 {
    libm::rintf(x)
}

#[inline]
pub fn round_half_even_f64(x: f64) -> f64 {
    libm::rint(x)
}

/// `x / 2^shift` rounded to nearest, ties to even. Arithmetic shift gives the
/// floor for negative values, so the remainder is always non-negative.
#[inline]
pub fn rounding_shift_right(x: i128, shift: u32) -> i128 {
    if shift == 0 {
        return x;
    }
    if shift >= 127 {
        return 0;
    }
    let q = x >> shift;
    let r = x - (q << shift);
    let half = 1i128 << (shift - 1);
    if r > half || (r == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Integer division rounded half to even, for positive `d`.
#[inline]
pub fn rounding_div(n: i64, d: i64) -> i64 {
    debug_assert!(d > 0);
    let q = n.div_euclid(d);
    let r = n.rem_euclid(d);
    if 2 * r > d || (2 * r == d && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Multiplier {
    mantissa: i32,
    shift: i32,
}

impl Multiplier {
    /// Fixed-point form of a positive, finite `m`.
    pub fn from_real(m: f64) -> Self {
        debug_assert!(m.is_finite() && m > 0.0);
        let (frac, exp) = libm::frexp(m);
        let mut mantissa = round_half_even_f64(frac * (1u64 << 31) as f64) as i64;
        let mut exp = exp;
        if mantissa == 1i64 << 31 {
            mantissa /= 2;
            exp += 1;
        }
        Multiplier { mantissa: mantissa as i32, shift: 31 - exp }
    }

    pub fn mantissa(&self) -> i32 {
        self.mantissa
    }

    pub fn shift(&self) -> i32 {
        self.shift
    }

    /// Raw product with the mantissa, still scaled by `2^shift`.
    #[inline]
    pub fn scaled(&self, acc: i64) -> i128 {
        acc as i128 * self.mantissa as i128
    }

    #[inline]
    pub fn apply(&self, acc: i64) -> i64 {
        let prod = self.scaled(acc);
        let out = if self.shift >= 0 {
            rounding_shift_right(prod, self.shift as u32)
        } else {
            prod << (-self.shift).min(64) as u32
        };
        out.clamp(i64::MIN as i128, i64::MAX as i128) as i64
    }
}

#[inline]
pub fn saturate_i8(v: i64, lo: i32, hi: i32) -> i8 {
    v.clamp(lo as i64, hi as i64) as i8
}
