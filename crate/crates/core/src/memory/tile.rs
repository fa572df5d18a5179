use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Fp16, TensorF16};

/// Bits delivered by all 32 HBM channels in one cycle.
pub const HBM_BEAT_BITS: usize = 32 * 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileGeom {
    pub d: usize,
    pub l: usize,
    pub bw_data: usize,
}

impl Default for TileGeom {
    fn default() -> Self {
        TileGeom { d: 64, l: 16, bw_data: 16 }
    }
}

impl TileGeom {
    pub fn new(d: usize, l: usize, bw_data: usize) -> Result<Self> {
        if d == 0 || l == 0 || bw_data == 0 || d % l != 0 {
            return Err(Error::InvalidConfig(format!(
                "tile geometry d={d} l={l} bw={bw_data}: d must be a positive multiple of l"
            )));
        }
        Ok(TileGeom { d, l, bw_data })
    }

    /// Weight elements delivered per beat.
    pub fn elems_per_beat(&self) -> usize {
        self.d * self.l
    }

    pub fn beat_bits(&self) -> usize {
        self.d * self.l * self.bw_data
    }

    pub fn lane_groups(&self) -> usize {
        self.d / self.l
    }

    /// Beats needed to stream a `rows x cols` matrix, ragged edges padded.
    pub fn beats(&self, rows: usize, cols: usize) -> u64 {
        (cols.div_ceil(self.l) * rows.div_ceil(self.d)) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BeatCoord {
    pub row_chunk: usize,
    pub col_band: usize,
    pub lane_group: usize,
}

impl BeatCoord {
    pub fn row_start(&self, geom: &TileGeom) -> usize {
        self.row_chunk * geom.d
    }

    pub fn col_start(&self, geom: &TileGeom) -> usize {
        self.col_band * geom.d + self.lane_group * geom.l
    }
}

/// Zigzag order: column bands of width d, row chunks top to bottom within a
/// band, lane groups left to right within a d x d tile.
pub fn tile_traversal(rows: usize, cols: usize, geom: &TileGeom) -> Vec<BeatCoord> {
    let mut out = Vec::with_capacity(geom.beats(rows, cols) as usize);
    if rows == 0 || cols == 0 {
        return out;
    }
    for col_band in 0..cols.div_ceil(geom.d) {
        let band_width = (cols - col_band * geom.d).min(geom.d);
        for row_chunk in 0..rows.div_ceil(geom.d) {
            for lane_group in 0..band_width.div_ceil(geom.l) {
                out.push(BeatCoord { row_chunk, col_band, lane_group });
            }
        }
    }
    out
}

/// A weight matrix stored beat by beat in traversal order. Each beat holds a
/// `d x l` block, row-major, zero-padded past the matrix edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TiledMatrix {
    rows: usize,
    cols: usize,
    /// First global column this shard owns.
    pub col_offset: usize,
    geom: TileGeom,
    coords: Vec<BeatCoord>,
    data: Vec<Fp16>,
}

impl TiledMatrix {
    pub fn from_dense(m: &TensorF16, col_offset: usize, geom: TileGeom) -> Self {
        let (rows, cols) = m.shape();
        let coords = tile_traversal(rows, cols, &geom);
        let per = geom.elems_per_beat();
        let mut data = vec![Fp16::ZERO; coords.len() * per];
        for (b, c) in coords.iter().enumerate() {
            let (r0, c0) = (c.row_start(&geom), c.col_start(&geom));
            for i in 0..geom.d.min(rows.saturating_sub(r0)) {
                for j in 0..geom.l.min(cols.saturating_sub(c0)) {
                    data[b * per + i * geom.l + j] = m.get(r0 + i, c0 + j);
                }
            }
        }
        TiledMatrix { rows, cols, col_offset, geom, coords, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn geom(&self) -> &TileGeom {
        &self.geom
    }

    pub fn n_beats(&self) -> usize {
        self.coords.len()
    }

    pub fn beat(&self, i: usize) -> (BeatCoord, &[Fp16]) {
        let per = self.geom.elems_per_beat();
        (self.coords[i], &self.data[i * per..(i + 1) * per])
    }

    /// Stored element count, excluding padding.
    pub fn element_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Fp16 {
        let g = &self.geom;
        let chunks = self.rows.div_ceil(g.d);
        let band = c / g.d;
        let band_width = (self.cols - band * g.d).min(g.d);
        let idx = band * chunks * g.lane_groups() + (r / g.d) * band_width.div_ceil(g.l) + (c % g.d) / g.l;
        self.data[idx * g.elems_per_beat() + (r % g.d) * g.l + c % g.l]
    }

    pub fn to_dense(&self) -> TensorF16 {
        let mut out = TensorF16::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(r, c, self.get(r, c));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_geometry_fills_one_hbm_beat() {
        let g = TileGeom::default();
        assert_eq!(g.beat_bits(), HBM_BEAT_BITS);
        assert_eq!(g.elems_per_beat(), 1024);
        assert!(TileGeom::new(64, 24, 16).is_err());
    }

    #[test]
    fn traversal_examples() {
        let g = TileGeom::default();
        let t = tile_traversal(128, 128, &g);
        assert_eq!(t.len(), 16);
        // Whole first band before the second.
        assert!(t[..8].iter().all(|c| c.col_band == 0));
        assert_eq!(t[4], BeatCoord { row_chunk: 1, col_band: 0, lane_group: 0 });
        assert_eq!(tile_traversal(64, 16, &g).len(), 1);
        let t = tile_traversal(65, 1, &g);
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].row_chunk, 1);
        assert!(tile_traversal(0, 5, &g).is_empty());
    }

    #[test]
    fn beat_counts_for_gpt2_matrices() {
        let g = TileGeom::default();
        assert_eq!(g.beats(1536, 1536), 2304);
        assert_eq!(g.beats(1536, 384), 576);
    }

    #[test]
    fn padded_lanes_are_zero() {
        let m = TensorF16::from_f64(65, 1, &[1.0; 65]).unwrap();
        let t = TiledMatrix::from_dense(&m, 0, TileGeom::default());
        let (_, b) = t.beat(1);
        assert_eq!(b[0], Fp16::ONE);
        assert!(b[1..].iter().all(|&x| x == Fp16::ZERO));
    }

    proptest! {
        #[test]
        fn tiling_round_trips(rows in 1usize..150, cols in 1usize..150, seed in any::<u64>()) {
            let vals: Vec<f64> = (0..rows * cols)
                .map(|i| ((i as u64).wrapping_mul(seed | 1) % 2000) as f64 / 16.0 - 60.0)
                .collect();
            let m = TensorF16::from_f64(rows, cols, &vals).unwrap();
            let g = TileGeom::default();
            let t = TiledMatrix::from_dense(&m, 0, g);
            prop_assert_eq!(t.n_beats() as u64, g.beats(rows, cols));
            prop_assert_eq!(t.to_dense(), m);
        }

        #[test]
        fn traversal_is_a_permutation(rows in 0usize..300, cols in 0usize..300) {
            let g = TileGeom::default();
            let t = tile_traversal(rows, cols, &g);
            // Brute-force enumeration of every d x l block.
            let mut want = Vec::new();
            for r in (0..rows).step_by(g.d) {
                for c in (0..cols).step_by(g.l) {
                    want.push((r, c));
                }
            }
            let mut got: Vec<_> = t.iter().map(|c| (c.row_start(&g), c.col_start(&g))).collect();
            got.sort();
            want.sort();
            prop_assert_eq!(got, want);
        }
    }
}
