//! FP16 function units. Every arithmetic step rounds to binary16.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::memory::TiledMatrix;
use crate::model::Fp16;

/// Pairwise adder tree over `width` slots (a power of two), zero-padded.
/// Each node rounds.
pub fn adder_tree(vals: &[Fp16], width: usize) -> Fp16 {
    debug_assert!(vals.len() <= width && width.is_power_of_two());
    let mut buf = vec![Fp16::ZERO; width];
    buf[..vals.len()].copy_from_slice(vals);
    let mut n = width;
    while n > 1 {
        n /= 2;
        for i in 0..n {
            buf[i] = buf[2 * i].add(buf[2 * i + 1]);
        }
    }
    buf[0]
}

fn tree_width(d: usize) -> usize {
    d.next_power_of_two()
}

/// Chained accumulation: adder tree per d-chunk, chunks summed in order.
pub fn accum(x: &[Fp16], d: usize) -> Fp16 {
    let w = tree_width(d);
    let mut acc: Option<Fp16> = None;
    for chunk in x.chunks(d) {
        let t = adder_tree(chunk, w);
        acc = Some(match acc {
            None => t,
            Some(a) => a.add(t),
        });
    }
    acc.unwrap_or(Fp16::ZERO)
}

fn chain(acc: &mut Option<Fp16>, partial: Fp16) {
    *acc = Some(match *acc {
        None => partial,
        Some(a) => a.add(partial),
    });
}

/// Matrix-vector product `x^T A` for an element accessor `a(i, j)`. Each
/// output column sums one adder tree of d products per row chunk, chunks
/// accumulated top to bottom.
pub fn matvec(x: &[Fp16], rows: usize, cols: usize, d: usize, a: impl Fn(usize, usize) -> Fp16) -> Result<Vec<Fp16>> {
    if x.len() != rows {
        return Err(Error::DimensionMismatch { op: "matvec", expected: rows, got: x.len() });
    }
    let w = tree_width(d);
    let mut out = Vec::with_capacity(cols);
    let mut prods = Vec::with_capacity(d);
    for j in 0..cols {
        let mut acc = None;
        for r0 in (0..rows).step_by(d) {
            prods.clear();
            prods.extend((r0..(r0 + d).min(rows)).map(|i| x[i].mul(a(i, j))));
            chain(&mut acc, adder_tree(&prods, w));
        }
        out.push(acc.unwrap_or(Fp16::ZERO));
    }
    Ok(out)
}

/// Matrix-vector product consuming a tiled matrix beat by beat in traversal
/// order, as the weight stream delivers it.
pub fn matvec_stream(x: &[Fp16], m: &TiledMatrix) -> Result<Vec<Fp16>> {
    let (rows, cols) = m.shape();
    if x.len() != rows {
        return Err(Error::DimensionMismatch { op: "matvec", expected: rows, got: x.len() });
    }
    let g = *m.geom();
    let w = tree_width(g.d);
    let mut acc: Vec<Option<Fp16>> = vec![None; cols];
    let mut prods = vec![Fp16::ZERO; g.d];
    for b in 0..m.n_beats() {
        let (c, data) = m.beat(b);
        let (r0, c0) = (c.row_start(&g), c.col_start(&g));
        let live_rows = g.d.min(rows - r0);
        for lane in 0..g.l.min(cols - c0) {
            for i in 0..live_rows {
                prods[i] = x[r0 + i].mul(data[i * g.l + lane]);
            }
            // Padded rows multiply zero weights by zero inputs.
            for p in prods.iter_mut().skip(live_rows) {
                *p = Fp16::ZERO;
            }
            chain(&mut acc[c0 + lane], adder_tree(&prods, w));
        }
    }
    Ok(acc.into_iter().map(|a| a.unwrap_or(Fp16::ZERO)).collect())
}

/// `y = x^T A + b` over a streamed weight shard.
pub fn conv1d(x: &[Fp16], a: &TiledMatrix, b: &[Fp16]) -> Result<Vec<Fp16>> {
    let (_, cols) = a.shape();
    if b.len() != cols {
        return Err(Error::DimensionMismatch { op: "conv1d bias", expected: cols, got: b.len() });
    }
    let mut y = matvec_stream(x, a)?;
    for (yj, bj) in y.iter_mut().zip(b) {
        *yj = yj.add(*bj);
    }
    Ok(y)
}

/// One row of scaled, causally masked attention scores against `K`
/// (stored row-major, `t x d_head`, read as `K^T`). Columns past `tok`
/// take the most negative finite FP16.
pub fn maskedmm(q: &[Fp16], key_rows: &[&[Fp16]], tok: usize, scale: Fp16, d: usize) -> Result<Vec<Fp16>> {
    let t = key_rows.len();
    if tok >= t {
        return Err(Error::DimensionMismatch { op: "maskedmm token index", expected: t, got: tok });
    }
    let dots = matvec(q, q.len(), t, d, |i, j| key_rows[j][i])?;
    Ok(dots.into_iter().enumerate().map(|(j, s)| if j > tok { Fp16::MIN } else { s.mul(scale) }).collect())
}

/// Total order for max search: NaN below everything, otherwise numeric;
/// -0 and +0 compare equal.
pub fn max_cmp(a: Fp16, b: Fp16) -> Ordering {
    a.max_order(b)
}

/// `(max, argmax)`; ties go to the lowest index.
pub fn redu_max(x: &[Fp16]) -> Result<(Fp16, usize)> {
    let (mut best, mut idx) = (*x.first().ok_or(Error::DimensionMismatch { op: "redu_max", expected: 1, got: 0 })?, 0);
    for (i, &v) in x.iter().enumerate().skip(1) {
        if max_cmp(v, best) == Ordering::Greater {
            best = v;
            idx = i;
        }
    }
    Ok((best, idx))
}

/// Elementwise binary op; a length-1 side broadcasts.
pub fn elementwise(a: &[Fp16], b: &[Fp16], f: impl Fn(Fp16, Fp16) -> Fp16) -> Result<Vec<Fp16>> {
    match (a.len(), b.len()) {
        (x, y) if x == y => Ok(a.iter().zip(b).map(|(&p, &q)| f(p, q)).collect()),
        (_, 1) => Ok(a.iter().map(|&p| f(p, b[0])).collect()),
        (1, _) => Ok(b.iter().map(|&q| f(a[0], q)).collect()),
        (x, y) => Err(Error::DimensionMismatch { op: "elementwise", expected: x, got: y }),
    }
}

/// tanh-form GELU evaluated in f64. Used only to fill the lookup table.
fn gelu_f64(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// GELU by table lookup with linear interpolation between 2048 samples on
/// [-8, 8]. Outside the range the function saturates to 0 or x.
#[derive(Clone, Debug)]
pub struct GeluLut {
    lo: f64,
    step: f64,
    /// Sample positions.
    xs: Vec<Fp16>,
    ys: Vec<Fp16>,
    slopes: Vec<Fp16>,
}

impl GeluLut {
    pub const SAMPLES: usize = 2048;
    pub const LO: f64 = -8.0;
    pub const HI: f64 = 8.0;

    pub fn new() -> Self {
        let n = Self::SAMPLES;
        let step = (Self::HI - Self::LO) / n as f64;
        let xs: Vec<Fp16> = (0..=n).map(|k| Fp16::from_f64(Self::LO + k as f64 * step)).collect();
        let ys: Vec<Fp16> = xs.iter().map(|x| Fp16::from_f64(gelu_f64(x.to_f64()))).collect();
        let slopes = (0..n).map(|k| Fp16::from_f64((ys[k + 1].to_f64() - ys[k].to_f64()) / step)).collect();
        GeluLut { lo: Self::LO, step, xs, ys, slopes }
    }

    /// Sample input `k` (0..2048).
    pub fn sample(&self, k: usize) -> Fp16 {
        self.xs[k]
    }

    pub fn sample_value(&self, k: usize) -> Fp16 {
        self.ys[k]
    }

    pub fn slope(&self, k: usize) -> Fp16 {
        self.slopes[k]
    }

    /// Segment index for an in-range input.
    pub fn segment(&self, x: Fp16) -> usize {
        (((x.to_f64() - self.lo) / self.step).floor() as usize).min(Self::SAMPLES - 1)
    }

    pub fn eval(&self, x: Fp16) -> Fp16 {
        if x.is_nan() {
            return x;
        }
        let v = x.to_f64();
        if v < Self::LO {
            return Fp16::ZERO;
        }
        if v > Self::HI {
            return x;
        }
        let k = self.segment(x);
        let dx = x.sub(self.xs[k]);
        if dx.to_f64() == 0.0 {
            // Keeps the sign of a stored -0.
            return self.ys[k];
        }
        self.ys[k].add(self.slopes[k].mul(dx))
    }
}

impl Default for GeluLut {
    fn default() -> Self {
        Self::new()
    }
}
