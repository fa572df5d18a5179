//! Binary16 emulation with a rounding after every scalar operation, in the
//! same tree orders as the hardware. Only for order-sensitive sums.

use super::f16ref::round;

/// Pairwise sum over a zero-padded power-of-two width, rounding each node.
pub fn tree_sum(xs: &[f64], width: usize) -> f64 {
    assert!(xs.len() <= width && width.is_power_of_two());
    let mut buf = xs.to_vec();
    buf.resize(width, 0.0);
    while buf.len() > 1 {
        buf = buf.chunks(2).map(|p| round(p[0] + p[1])).collect();
    }
    buf[0]
}

/// One tree per `d`-element chunk, chunk sums chained left to right.
pub fn chunked_sum(xs: &[f64], d: usize) -> f64 {
    let w = d.next_power_of_two();
    xs.chunks(d).map(|c| tree_sum(c, w)).reduce(|a, b| round(a + b)).unwrap_or(0.0)
}

/// `x . a` with rounded products, summed as `chunked_sum`.
pub fn dot(x: &[f64], a: &[f64], d: usize) -> f64 {
    let prods: Vec<f64> = x.iter().zip(a).map(|(p, q)| round(p * q)).collect();
    chunked_sum(&prods, d)
}
