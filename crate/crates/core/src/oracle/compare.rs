use std::collections::BTreeMap;
use std::fmt;

use super::f16ref::nearest_bits;
use crate::error::{Error, Result};
use crate::model::Fp16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tolerance {
    /// Distance in representable binary16 values.
    Ulp(u32),
    /// `|sim - ref| <= r * |ref|`.
    Relative(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub index: usize,
    pub sim: f64,
    pub reference: f64,
    pub ulp: u32,
}

/// Elementwise comparison of a simulated vector against a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub n: usize,
    pub tol: Tolerance,
    pub max_ulp: u32,
    /// Elements per ulp distance.
    pub histogram: BTreeMap<u32, usize>,
    /// Out-of-tolerance elements, at most 16.
    pub failures: Vec<Mismatch>,
    pub n_failed: usize,
}

impl Comparison {
    pub fn pass(&self) -> bool {
        self.n_failed == 0
    }

    /// Folds another comparison into this one.
    pub fn merge(&mut self, other: &Comparison) {
        for f in &other.failures {
            if self.failures.len() < 16 {
                self.failures.push(Mismatch { index: f.index + self.n, ..f.clone() });
            }
        }
        self.n += other.n;
        self.n_failed += other.n_failed;
        self.max_ulp = self.max_ulp.max(other.max_ulp);
        for (k, v) in &other.histogram {
            *self.histogram.entry(*k).or_default() += v;
        }
    }

    pub fn empty(tol: Tolerance) -> Self {
        Comparison { n: 0, tol, max_ulp: 0, histogram: BTreeMap::new(), failures: Vec::new(), n_failed: 0 }
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} elements, max {} ulp, {} out of tolerance", self.n, self.max_ulp, self.n_failed)?;
        if let Some(m) = self.failures.first() {
            write!(f, "; first at index {}: {} vs {} ({} ulp)", m.index, m.sim, m.reference, m.ulp)?;
        }
        Ok(())
    }
}

/// Position on the ordered line of binary16 values, both zeros at 0.
fn ordinal(bits: u16) -> i64 {
    let mag = (bits & 0x7FFF) as i64;
    if bits & 0x8000 != 0 {
        -mag
    } else {
        mag
    }
}

/// Distance between `sim` and the binary16 rounding of `reference`.
pub fn ulp_distance(sim: Fp16, reference: f64) -> u32 {
    let r = nearest_bits(reference);
    let s = sim.to_bits();
    let nan = |b: u16| b & 0x7C00 == 0x7C00 && b & 0x3FF != 0;
    if nan(s) || nan(r) {
        return if nan(s) && nan(r) { 0 } else { u32::MAX };
    }
    (ordinal(s) - ordinal(r)).unsigned_abs().min(u32::MAX as u64) as u32
}

pub fn compare(sim: &[Fp16], reference: &[f32], tol: Tolerance) -> Result<Comparison> {
    if sim.len() != reference.len() {
        return Err(Error::DimensionMismatch { op: "compare", expected: reference.len(), got: sim.len() });
    }
    let mut c = Comparison::empty(tol);
    c.n = sim.len();
    for (i, (&s, &r)) in sim.iter().zip(reference).enumerate() {
        let r = r as f64;
        let u = ulp_distance(s, r);
        *c.histogram.entry(u).or_default() += 1;
        c.max_ulp = c.max_ulp.max(u);
        let ok = match tol {
            Tolerance::Ulp(k) => u <= k,
            Tolerance::Relative(q) => (s.to_f64() - r).abs() <= q * r.abs(),
        };
        if !ok {
            c.n_failed += 1;
            if c.failures.len() < 16 {
                c.failures.push(Mismatch { index: i, sim: s.to_f64(), reference: r, ulp: u });
            }
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_zero() {
        let r: Vec<f32> = (0..50).map(|i| i as f32 * 0.37 - 4.0).collect();
        let s: Vec<Fp16> = r.iter().map(|&v| Fp16::from_f32(v)).collect();
        let c = compare(&s, &r, Tolerance::Ulp(0)).unwrap();
        assert!(c.pass());
        assert_eq!(c.max_ulp, 0);
    }

    #[test]
    fn bit_flip_is_localized() {
        let r: Vec<f32> = vec![1.0; 10];
        let mut s: Vec<Fp16> = vec![Fp16::ONE; 10];
        s[6] = Fp16::from_bits(Fp16::ONE.to_bits() ^ 0x0100);
        let c = compare(&s, &r, Tolerance::Ulp(2)).unwrap();
        assert!(!c.pass());
        assert_eq!(c.failures[0].index, 6);
        assert_eq!(c.failures[0].ulp, 256);
        assert!(compare(&s, &r[..9], Tolerance::Ulp(2)).is_err());
    }

    #[test]
    fn zeros_and_signs() {
        assert_eq!(ulp_distance(Fp16::NEG_ZERO, 0.0), 0);
        assert_eq!(ulp_distance(Fp16::from_bits(1), -(2f64.powi(-24))), 2);
        assert_eq!(ulp_distance(Fp16::NAN, 1.0), u32::MAX);
    }
}
