//! Tanh-form GELU in f64 and an analytic error bound for a 2048-segment
//! linear-interpolation table over [-8, 8].

use super::f16ref::{nearest_bits, round, value_of};
use crate::model::Fp16;

const A: f64 = 0.044715;

fn c() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

pub fn gelu_exact(x: f64) -> f64 {
    0.5 * x * (1.0 + (c() * (x + A * x * x * x)).tanh())
}

/// Second derivative of `gelu_exact`.
pub fn gelu_second_derivative(x: f64) -> f64 {
    let u = c() * (x + A * x * x * x);
    let du = c() * (1.0 + 3.0 * A * x * x);
    let ddu = 6.0 * A * c() * x;
    let t = u.tanh();
    let s = 1.0 - t * t;
    s * du + 0.5 * x * (-2.0 * t * s * du * du + s * ddu)
}

pub const LO: f64 = -8.0;
pub const HI: f64 = 8.0;
pub const SEGMENTS: usize = 2048;

pub fn step() -> f64 {
    (HI - LO) / SEGMENTS as f64
}

/// Spacing of binary16 values around `x`.
pub fn ulp_at(x: f64) -> f64 {
    let b = nearest_bits(x.abs());
    let e = ((b >> 10) & 0x1F) as i32;
    2f64.powi(e.max(1) - 25)
}

/// Largest `|table(x) - fp16(gelu_exact(x))|` any faithful implementation
/// of the table may show on segment `k`: the interpolation remainder, the
/// rounding of both endpoints and the slope, the rounding of the
/// subtraction, multiply and add, the rounding of the reference itself, and
/// one ulp of slack.
pub fn segment_bound(k: usize) -> f64 {
    let h = step();
    let x0 = LO + k as f64 * h;
    let x1 = x0 + h;
    let mut f2: f64 = 0.0;
    for i in 0..=64 {
        f2 = f2.max(gelu_second_derivative(x0 + h * i as f64 / 64.0).abs());
    }
    let remainder = h * h / 8.0 * f2 * 1.01;
    let y0 = gelu_exact(x0);
    let y1 = gelu_exact(x1);
    let ymax = y0.abs().max(y1.abs());
    let endpoints = 0.5 * ulp_at(ymax);
    let slope = ((round(y1) - round(y0)) / h).abs();
    let slope_err = 0.5 * ulp_at(slope) * h;
    let dx_err = 0.5 * ulp_at(h) * slope;
    let mul_err = 0.5 * ulp_at(slope * h);
    let add_err = 0.5 * ulp_at(ymax + slope * h);
    let ref_err = 0.5 * ulp_at(ymax);
    remainder + endpoints + slope_err + dx_err + mul_err + add_err + ref_err + ulp_at(ymax)
}

/// Result of scanning a table implementation over [-8, 8].
#[derive(Clone, Debug, PartialEq)]
pub struct GeluScan {
    pub points: usize,
    pub max_err: f64,
    pub worst_x: f64,
    /// Largest ratio of observed error to its segment's bound.
    pub max_ratio: f64,
    pub violations: usize,
}

impl GeluScan {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// Evaluates `table` at `points` uniformly spaced inputs (each rounded to
/// binary16) and checks each against its segment's bound.
pub fn scan(points: usize, table: impl Fn(Fp16) -> Fp16) -> GeluScan {
    let bounds: Vec<f64> = (0..SEGMENTS).map(segment_bound).collect();
    let mut s = GeluScan { points, max_err: 0.0, worst_x: 0.0, max_ratio: 0.0, violations: 0 };
    for i in 0..points {
        let x = LO + (HI - LO) * i as f64 / (points - 1) as f64;
        let xq = value_of(nearest_bits(x));
        let got = table(Fp16::from_f64(xq)).to_f64();
        let want = round(gelu_exact(xq));
        let err = (got - want).abs();
        let k = (((xq - LO) / step()).floor() as usize).min(SEGMENTS - 1);
        let ratio = err / bounds[k];
        if err > s.max_err {
            s.max_err = err;
            s.worst_x = xq;
        }
        s.max_ratio = s.max_ratio.max(ratio);
        if ratio.is_nan() || ratio > 1.0 {
            s.violations += 1;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities() {
        assert_eq!(gelu_exact(0.0), 0.0);
        for x in [0.1, 0.7, 1.0, 2.5, 5.0, 7.9] {
            // The tanh term is odd, so the difference (not the sum) recovers x.
            assert!((gelu_exact(x) - gelu_exact(-x) - x).abs() < 1e-12);
        }
        assert!((gelu_exact(1.0) - 0.841_192).abs() < 1e-5);
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        for x in [-3.0, -1.0, -0.2, 0.0, 0.4, 1.7, 4.0] {
            let h = 1e-4;
            let fd = (gelu_exact(x + h) - 2.0 * gelu_exact(x) + gelu_exact(x - h)) / (h * h);
            assert!((fd - gelu_second_derivative(x)).abs() < 1e-5, "{x}");
        }
    }

    #[test]
    fn scan_flags_a_bad_table() {
        let bad = scan(10_001, |x| Fp16::from_f64(x.to_f64().max(0.0)));
        assert!(!bad.pass());
        let good = scan(10_001, |x| Fp16::from_f64(gelu_exact(x.to_f64())));
        assert!(good.pass(), "{good:?}");
    }

    #[test]
    fn ulp_spacing() {
        assert_eq!(ulp_at(1.0), 2f64.powi(-10));
        assert_eq!(ulp_at(0.0), 2f64.powi(-24));
        assert_eq!(ulp_at(1000.0), 0.5);
    }
}
