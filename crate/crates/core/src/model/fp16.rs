//! IEEE 754 binary16 scalar with round-to-nearest-even on every operation.
//!
//! Every arithmetic result is produced by computing the exact (or correctly
//! rounded double precision) result and rounding it once to binary16. Sums,
//! differences and products of two binary16 values are exact in `f64`, so
//! those operations are correctly rounded. Division and square root are
//! correctly rounded in `f64` first; because 53 >= 2 * 11 + 2 the second
//! rounding cannot change the result.

use std::cmp::Ordering;
use std::fmt;

/// A binary16 value stored as its raw bit pattern.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Fp16(pub u16);

const SIGN_MASK: u16 = 0x8000;
const EXP_MASK: u16 = 0x7C00;
const FRAC_MASK: u16 = 0x03FF;

impl Fp16 {
    pub const ZERO: Fp16 = Fp16(0x0000);
    pub const NEG_ZERO: Fp16 = Fp16(0x8000);
    pub const ONE: Fp16 = Fp16(0x3C00);
    pub const INFINITY: Fp16 = Fp16(0x7C00);
    pub const NEG_INFINITY: Fp16 = Fp16(0xFC00);
    pub const NAN: Fp16 = Fp16(0x7E00);
    /// Largest finite value, 65504.
    pub const MAX: Fp16 = Fp16(0x7BFF);
    /// Most negative finite value, -65504. Used as the causal-mask surrogate for -inf.
    pub const MIN: Fp16 = Fp16(0xFBFF);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Fp16(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Rounds a double to the nearest binary16, ties to even. Overflow goes to
    /// infinity exactly as IEEE round-to-nearest prescribes (>= 65520 rounds up).
    pub fn from_f64(x: f64) -> Self {
        let sign = if x.is_sign_negative() { SIGN_MASK } else { 0 };
        if x.is_nan() {
            return Fp16(sign | 0x7E00);
        }
        let a = x.abs();
        if a.is_infinite() || a >= 65520.0 {
            return Fp16(sign | EXP_MASK);
        }
        if a < f64::powi(2.0, -14) {
            // Subnormal range: integer multiples of 2^-24. A result of 1024
            // carries into the smallest normal, which has the same encoding.
            let q = (a * f64::powi(2.0, 24)).round_ties_even();
            return Fp16(sign | q as u16);
        }
        let mut exp = ((a.to_bits() >> 52) & 0x7FF) as i32 - 1023;
        let mant = a / f64::powi(2.0, exp);
        let mut frac = ((mant - 1.0) * 1024.0).round_ties_even() as u32;
        if frac == 1024 {
            frac = 0;
            exp += 1;
        }
        if exp > 15 {
            return Fp16(sign | EXP_MASK);
        }
        Fp16(sign | (((exp + 15) as u16) << 10) | frac as u16)
    }

    #[inline]
    pub fn from_f32(x: f32) -> Self {
        Self::from_f64(x as f64)
    }

    /// Exact conversion to double.
    pub fn to_f64(self) -> f64 {
        let sign = if self.0 & SIGN_MASK != 0 { -1.0 } else { 1.0 };
        let exp = ((self.0 & EXP_MASK) >> 10) as i32;
        let frac = (self.0 & FRAC_MASK) as f64;
        match exp {
            0 => sign * frac * f64::powi(2.0, -24),
            31 if frac == 0.0 => sign * f64::INFINITY,
            31 => f64::NAN,
            _ => sign * (1.0 + frac / 1024.0) * f64::powi(2.0, exp - 15),
        }
    }

    #[inline]
    pub fn to_f32(self) -> f32 {
        self.to_f64() as f32
    }

    #[inline]
    pub fn is_nan(self) -> bool {
        self.0 & EXP_MASK == EXP_MASK && self.0 & FRAC_MASK != 0
    }

    #[inline]
    pub fn is_infinite(self) -> bool {
        self.0 & 0x7FFF == EXP_MASK
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.0 & EXP_MASK != EXP_MASK
    }

    #[inline]
    pub fn is_sign_negative(self) -> bool {
        self.0 & SIGN_MASK != 0
    }

    #[inline]
    pub fn abs(self) -> Self {
        Fp16(self.0 & 0x7FFF)
    }

    #[inline]
    pub fn neg(self) -> Self {
        Fp16(self.0 ^ SIGN_MASK)
    }

    #[inline]
    pub fn add(self, rhs: Self) -> Self {
        Self::from_f64(self.to_f64() + rhs.to_f64())
    }

    #[inline]
    pub fn sub(self, rhs: Self) -> Self {
        Self::from_f64(self.to_f64() - rhs.to_f64())
    }

    #[inline]
    pub fn mul(self, rhs: Self) -> Self {
        Self::from_f64(self.to_f64() * rhs.to_f64())
    }

    #[inline]
    pub fn div(self, rhs: Self) -> Self {
        Self::from_f64(self.to_f64() / rhs.to_f64())
    }

    pub fn recip(self) -> Self {
        Self::from_f64(1.0 / self.to_f64())
    }

    pub fn sqrt(self) -> Self {
        Self::from_f64(self.to_f64().sqrt())
    }

    pub fn recip_sqrt(self) -> Self {
        Self::from_f64(1.0 / self.to_f64().sqrt())
    }

    pub fn exp(self) -> Self {
        Self::from_f64(self.to_f64().exp())
    }

    /// Unit in the last place at this value's magnitude (the spacing to the
    /// next representable value away from zero).
    pub fn ulp(self) -> f64 {
        let exp = ((self.0 & EXP_MASK) >> 10) as i32;
        if exp == 0 {
            f64::powi(2.0, -24)
        } else {
            f64::powi(2.0, exp - 25)
        }
    }

    /// Position on the monotone integer line of finite binary16 values, with
    /// +0 and -0 both mapping to 0.
    fn ordinal(self) -> i32 {
        let mag = (self.0 & 0x7FFF) as i32;
        if self.is_sign_negative() {
            -mag
        } else {
            mag
        }
    }

    /// Number of representable values between `self` and `other`.
    /// NaN on either side gives `u32::MAX`.
    pub fn ulp_distance(self, other: Self) -> u32 {
        if self.is_nan() || other.is_nan() {
            return if self.is_nan() && other.is_nan() { 0 } else { u32::MAX };
        }
        (self.ordinal() - other.ordinal()).unsigned_abs()
    }

    /// Total order used by the reduce-max unit: NaN sorts below every value,
    /// signed zeros compare equal.
    pub fn max_order(self, other: Self) -> Ordering {
        match (self.is_nan(), other.is_nan()) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            _ => self.ordinal().cmp(&other.ordinal()),
        }
    }
}

impl fmt::Debug for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(0x{:04X})", self.to_f64(), self.0)
    }
}

impl fmt::Display for Fp16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f64(), f)
    }
}

impl From<Fp16> for f64 {
    fn from(v: Fp16) -> f64 {
        v.to_f64()
    }
}

impl From<Fp16> for f32 {
    fn from(v: Fp16) -> f32 {
        v.to_f32()
    }
}

/// Rounds a real value to binary16.
pub fn fp16_round(x: f64) -> Fp16 {
    Fp16::from_f64(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::f16ref;
    use half::f16;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encodes_reference_values() {
        assert_eq!(fp16_round(1.0).to_bits(), 0x3C00);
        assert_eq!(fp16_round(-0.0).to_bits(), 0x8000);
        assert_eq!(fp16_round(65520.0), Fp16::INFINITY);
        assert_eq!(fp16_round(65519.99), Fp16::MAX);
        assert_eq!(fp16_round(-65504.0), Fp16::MIN);
        assert_eq!(fp16_round(f64::NEG_INFINITY), Fp16::NEG_INFINITY);
        assert!(fp16_round(f64::NAN).is_nan());
        assert_eq!(fp16_round(f64::powi(2.0, -24)).to_bits(), 0x0001);
        // Exactly half the smallest subnormal ties to even (zero).
        assert_eq!(fp16_round(f64::powi(2.0, -25)).to_bits(), 0x0000);
        assert_eq!(fp16_round(1.5 * f64::powi(2.0, -24)).to_bits(), 0x0002);
    }

    #[test]
    fn nan_and_inf_propagate() {
        assert!(Fp16::NAN.add(Fp16::ONE).is_nan());
        assert_eq!(Fp16::INFINITY.add(Fp16::ONE), Fp16::INFINITY);
        assert!(Fp16::INFINITY.sub(Fp16::INFINITY).is_nan());
        assert_eq!(Fp16::ZERO.recip(), Fp16::INFINITY);
        assert_eq!(Fp16::NEG_ZERO.recip(), Fp16::NEG_INFINITY);
        assert_eq!(Fp16::ZERO.recip_sqrt(), Fp16::INFINITY);
    }

    #[test]
    fn every_bit_pattern_round_trips() {
        for bits in 0..=u16::MAX {
            let v = Fp16(bits);
            if v.is_nan() {
                assert!(Fp16::from_f64(v.to_f64()).is_nan());
            } else {
                assert_eq!(Fp16::from_f64(v.to_f64()), v, "bits {bits:04X}");
                assert_eq!(v.to_f64(), f16::from_bits(bits).to_f64());
            }
        }
    }

    #[test]
    fn rounding_matches_independent_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let x: f64 = rng.gen_range(-70000.0..70000.0) * f64::powi(2.0, rng.gen_range(-30..1));
            assert_eq!(Fp16::from_f64(x).to_bits(), f16ref::nearest_bits(x), "x = {x}");
            let xf = x as f32;
            assert_eq!(Fp16::from_f32(xf).to_bits(), f16::from_f32(xf).to_bits(), "xf = {xf}");
        }
    }

    #[test]
    fn arithmetic_matches_ieee_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let oracle = f16ref::nearest_bits;
        let mut checked = 0;
        while checked < 100_000 {
            let a = Fp16(rng.gen());
            let b = Fp16(rng.gen());
            if a.is_nan() || b.is_nan() {
                continue;
            }
            let (x, y) = (a.to_f64(), b.to_f64());
            for (got, want) in [(a.add(b), x + y), (a.sub(b), x - y), (a.mul(b), x * y), (a.div(b), x / y)] {
                if want.is_nan() {
                    assert!(got.is_nan());
                } else {
                    assert_eq!(got.to_bits(), oracle(want), "{a:?} {b:?}");
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn ulp_distance_counts_representable_steps() {
        let one = Fp16::ONE;
        let next = Fp16(one.0 + 1);
        assert_eq!(one.ulp_distance(next), 1);
        assert_eq!(Fp16::ZERO.ulp_distance(Fp16::NEG_ZERO), 0);
        assert_eq!(Fp16(0x0001).ulp_distance(Fp16(0x8001)), 2);
        assert_eq!(one.ulp(), f64::powi(2.0, -10));
    }

    #[test]
    fn nan_orders_below_everything() {
        assert_eq!(Fp16::NAN.max_order(Fp16::NEG_INFINITY), Ordering::Less);
        assert_eq!(Fp16::ZERO.max_order(Fp16::NEG_ZERO), Ordering::Equal);
        assert_eq!(Fp16::ONE.max_order(Fp16::MIN), Ordering::Greater);
    }
}
