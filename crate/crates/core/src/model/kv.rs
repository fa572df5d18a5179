use super::fp16::Fp16;
use super::tensor::TensorF16;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct HeadCache {
    key: TensorF16,
    value_t: TensorF16,
}

/// Per-layer, per-head Key rows and transposed Value columns.
///
/// Key is stored row-major (`tokens x d_head`); Value is stored transposed
/// (`d_head x tokens`), one column appended per token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KVCache {
    n_layer: usize,
    n_head: usize,
    d_head: usize,
    max_seq: usize,
    heads: Vec<HeadCache>,
}

impl KVCache {
    pub fn new(n_layer: usize, n_head: usize, d_head: usize, max_seq: usize) -> Self {
        KVCache { n_layer, n_head, d_head, max_seq, heads: vec![HeadCache::default(); n_layer * n_head] }
    }

    fn slot(&self, layer: usize, head: usize) -> Result<usize> {
        if layer >= self.n_layer || head >= self.n_head {
            return Err(Error::Operand(format!("kv slot (layer {layer}, head {head}) out of range")));
        }
        Ok(layer * self.n_head + head)
    }

    fn check_row(&self, row: &[Fp16], op: &'static str) -> Result<()> {
        if row.len() != self.d_head {
            return Err(Error::DimensionMismatch { op, expected: self.d_head, got: row.len() });
        }
        Ok(())
    }

    pub fn append_key(&mut self, layer: usize, head: usize, k_row: &[Fp16]) -> Result<()> {
        self.check_row(k_row, "kv_append key")?;
        let s = self.slot(layer, head)?;
        let len = self.heads[s].key.rows();
        if len >= self.max_seq {
            return Err(Error::SeqOverflow { len: len + 1, max_seq: self.max_seq });
        }
        self.heads[s].key.push_row(k_row)
    }

    pub fn append_value(&mut self, layer: usize, head: usize, v_row: &[Fp16]) -> Result<()> {
        self.check_row(v_row, "kv_append value")?;
        let s = self.slot(layer, head)?;
        let len = self.heads[s].value_t.cols();
        if len >= self.max_seq {
            return Err(Error::SeqOverflow { len: len + 1, max_seq: self.max_seq });
        }
        self.heads[s].value_t.push_col(v_row)
    }

    /// Appends one token's Key row and Value row for `(layer, head)`.
    pub fn append(&mut self, layer: usize, head: usize, k_row: &[Fp16], v_row: &[Fp16]) -> Result<()> {
        self.check_row(k_row, "kv_append key")?;
        self.check_row(v_row, "kv_append value")?;
        self.append_value(layer, head, v_row)?;
        self.append_key(layer, head, k_row)
    }

    pub fn key(&self, layer: usize, head: usize) -> &TensorF16 {
        &self.heads[layer * self.n_head + head].key
    }

    pub fn value_t(&self, layer: usize, head: usize) -> &TensorF16 {
        &self.heads[layer * self.n_head + head].value_t
    }

    /// Tokens stored for `(layer, head)`.
    pub fn len(&self, layer: usize, head: usize) -> usize {
        self.key(layer, head).rows()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.iter().all(|h| h.key.rows() == 0)
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    /// Key row count equals Value column count for every populated slot.
    pub fn shapes_consistent(&self) -> bool {
        self.heads.iter().all(|h| {
            h.key.rows() == h.value_t.cols()
                && (h.key.rows() == 0 || (h.key.cols() == self.d_head && h.value_t.rows() == self.d_head))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(start: f64, n: usize) -> Vec<Fp16> {
        (0..n).map(|i| Fp16::from_f64(start + i as f64)).collect()
    }

    #[test]
    fn single_append_shapes() {
        let mut kv = KVCache::new(1, 1, 64, 16);
        kv.append(0, 0, &row(0.0, 64), &row(0.0, 64)).unwrap();
        assert_eq!(kv.key(0, 0).shape(), (1, 64));
        assert_eq!(kv.value_t(0, 0).shape(), (64, 1));
    }

    #[test]
    fn repeated_appends_grow_by_one_row() {
        let mut kv = KVCache::new(2, 2, 64, 16);
        for t in 1..=5 {
            kv.append(1, 1, &row(t as f64, 64), &row(0.0, 64)).unwrap();
            assert_eq!(kv.key(1, 1).shape(), (t, 64));
            assert!(kv.shapes_consistent());
        }
        assert_eq!(kv.len(0, 0), 0);
    }

    #[test]
    fn value_column_is_the_appended_row() {
        let mut kv = KVCache::new(1, 1, 64, 16);
        let v = row(1.0, 64);
        kv.append(0, 0, &row(0.0, 64), &v).unwrap();
        let vt = kv.value_t(0, 0);
        for (i, &x) in v.iter().enumerate() {
            assert_eq!(vt.get(i, 0), x);
        }
    }

    #[test]
    fn overflow_and_bad_widths_are_errors() {
        let mut kv = KVCache::new(1, 1, 4, 2);
        kv.append(0, 0, &row(0.0, 4), &row(0.0, 4)).unwrap();
        kv.append(0, 0, &row(0.0, 4), &row(0.0, 4)).unwrap();
        assert!(matches!(kv.append(0, 0, &row(0.0, 4), &row(0.0, 4)), Err(Error::SeqOverflow { .. })));
        assert!(kv.append_key(0, 0, &row(0.0, 3)).is_err());
        assert!(kv.append_key(1, 0, &row(0.0, 4)).is_err());
    }
}
