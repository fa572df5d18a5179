use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::GPTConfig;

/// Matrices that live in HBM and are split across cores.
pub const SHARDED_MATRICES: [&str; 6] = ["wq", "wk", "wv", "wa", "wf1", "wf2"];

/// The slice of the model one core owns.
///
/// Q/K/V are split head-wise (whole 64-column head blocks); the attention
/// projection and both FFN matrices are split column-wise. The LM head and
/// all layernorm/residual work are replicated on every core.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ShardSpec {
    pub core_id: usize,
    pub n_cores: usize,
    pub head_range: Range<usize>,
    /// Owned output columns of `wa`.
    pub attn_cols: Range<usize>,
    /// Owned output columns of `wf1`.
    pub ffn1_cols: Range<usize>,
    /// Owned output columns of `wf2`.
    pub ffn2_cols: Range<usize>,
    d_head: usize,
}

fn even_split(total: usize, n: usize, i: usize, what: &str) -> Result<Range<usize>> {
    if n == 0 || total % n != 0 {
        return Err(Error::Shard(format!("{n} cores do not evenly divide {total} {what}")));
    }
    let w = total / n;
    Ok(i * w..(i + 1) * w)
}

impl ShardSpec {
    pub fn new(cfg: &GPTConfig, core_id: usize, n_cores: usize) -> Result<Self> {
        if core_id >= n_cores {
            return Err(Error::Shard(format!("core id {core_id} >= core count {n_cores}")));
        }
        Ok(ShardSpec {
            core_id,
            n_cores,
            head_range: even_split(cfg.n_head, n_cores, core_id, "attention heads")?,
            attn_cols: even_split(cfg.emb, n_cores, core_id, "attention-projection columns")?,
            ffn1_cols: even_split(cfg.ffn_dim(), n_cores, core_id, "FFN1 columns")?,
            ffn2_cols: even_split(cfg.emb, n_cores, core_id, "FFN2 columns")?,
            d_head: cfg.d_head,
        })
    }

    /// The whole model on one core.
    pub fn single(cfg: &GPTConfig) -> Self {
        Self::new(cfg, 0, 1).expect("one core always divides the model")
    }

    /// Owned output columns of a sharded matrix (`wq`, `wk`, `wv`, `wa`, `wf1`, `wf2`).
    pub fn cols(&self, matrix: &str) -> Option<Range<usize>> {
        match matrix {
            "wq" | "wk" | "wv" => Some(self.head_range.start * self.d_head..self.head_range.end * self.d_head),
            "wa" => Some(self.attn_cols.clone()),
            "wf1" => Some(self.ffn1_cols.clone()),
            "wf2" => Some(self.ffn2_cols.clone()),
            _ => None,
        }
    }

    pub fn n_local_heads(&self) -> usize {
        self.head_range.len()
    }

    pub fn owns_head(&self, head: usize) -> bool {
        self.head_range.contains(&head)
    }

    /// Column offset of a global head inside this core's Q/K/V slice.
    pub fn local_head_offset(&self, head: usize) -> usize {
        (head - self.head_range.start) * self.d_head
    }
}
