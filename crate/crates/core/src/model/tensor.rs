use super::fp16::Fp16;
use crate::error::{Error, Result};

/// Row-major binary16 matrix.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TensorF16 {
    rows: usize,
    cols: usize,
    data: Vec<Fp16>,
}

impl TensorF16 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        TensorF16 { rows, cols, data: vec![Fp16::ZERO; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Fp16>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { op: "tensor", expected: rows * cols, got: data.len() });
        }
        Ok(TensorF16 { rows, cols, data })
    }

    pub fn from_f64(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::from_vec(rows, cols, values.iter().map(|&v| Fp16::from_f64(v)).collect())
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[Fp16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Fp16 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Fp16) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Fp16] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn push_row(&mut self, row: &[Fp16]) -> Result<()> {
        if self.rows > 0 && row.len() != self.cols {
            return Err(Error::DimensionMismatch { op: "push_row", expected: self.cols, got: row.len() });
        }
        self.cols = row.len();
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn push_col(&mut self, col: &[Fp16]) -> Result<()> {
        if self.cols > 0 && col.len() != self.rows {
            return Err(Error::DimensionMismatch { op: "push_col", expected: self.rows, got: col.len() });
        }
        let rows = col.len();
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(rows * cols);
        for (r, &v) in col.iter().enumerate() {
            if self.cols > 0 {
                data.extend_from_slice(&self.data[r * self.cols..(r + 1) * self.cols]);
            }
            data.push(v);
        }
        *self = TensorF16 { rows, cols, data };
        Ok(())
    }

    /// Columns `[c0, c1)` as a new tensor.
    pub fn col_slice(&self, c0: usize, c1: usize) -> TensorF16 {
        let cols = c1 - c0;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.data[r * self.cols + c0..r * self.cols + c1]);
        }
        TensorF16 { rows: self.rows, cols, data }
    }

    pub fn transpose(&self) -> TensorF16 {
        let mut out = TensorF16::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }
}
