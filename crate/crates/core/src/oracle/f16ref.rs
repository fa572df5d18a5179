//! Reference binary16 rounding by search over the enumerated value set.
//!
//! Built independently of `model::Fp16`: the positive finite values are
//! enumerated as integer multiples of powers of two, and rounding picks the
//! nearest neighbour by comparing against the exact midpoint.

use std::sync::OnceLock;

fn positive_values() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut v = Vec::with_capacity(0x7C00);
        for k in 0..1024u32 {
            v.push(k as f64 * 2f64.powi(-24));
        }
        for e in 1..=30i32 {
            for f in 0..1024u32 {
                v.push((1024 + f) as f64 * 2f64.powi(e - 25));
            }
        }
        v
    })
}

/// Bit pattern of the binary16 nearest to `x`, ties to the even pattern.
pub fn nearest_bits(x: f64) -> u16 {
    let sign: u16 = if x.is_sign_negative() { 0x8000 } else { 0 };
    if x.is_nan() {
        return sign | 0x7E00;
    }
    let a = x.abs();
    let table = positive_values();
    let max = *table.last().unwrap();
    // Overflow threshold is the midpoint between max finite and 2^16.
    if a >= (max + 65536.0) / 2.0 {
        return sign | 0x7C00;
    }
    if a >= max {
        return sign | (table.len() as u16 - 1);
    }
    // Index of the last value <= a.
    let lo = table.partition_point(|&v| v <= a) - 1;
    let (below, above) = (table[lo], table[lo + 1]);
    let mid = (below + above) / 2.0;
    let idx = if a < mid {
        lo
    } else if a > mid {
        lo + 1
    } else if lo % 2 == 0 {
        lo
    } else {
        lo + 1
    };
    sign | idx as u16
}

/// Value of a binary16 bit pattern.
pub fn value_of(bits: u16) -> f64 {
    let mag = (bits & 0x7FFF) as usize;
    let s = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    match mag {
        0x7C00 => s * f64::INFINITY,
        m if m > 0x7C00 => f64::NAN,
        m => s * positive_values()[m],
    }
}

/// `x` rounded through binary16.
pub fn round(x: f64) -> f64 {
    value_of(nearest_bits(x))
}
