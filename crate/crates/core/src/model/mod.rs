//! Core domain types: configuration, binary16 scalars, tensors, tokens and
//! the KV cache.

mod config;
mod fp16;
mod kv;
mod tensor;
mod weights;

pub use config::GPTConfig;
pub use fp16::{fp16_round, Fp16};
pub use kv::KVCache;
pub use tensor::TensorF16;
pub use weights::{LayerWeights, ModelWeights, ParamRef};

use crate::error::{Error, Result};

/// Layernorm epsilon.
pub const LN_EPS: f64 = 1e-5;

/// A sequence of token IDs, each below the vocabulary size.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    ids: Vec<u32>,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>, vocab: usize) -> Result<Self> {
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::TokenOutOfRange { id, vocab });
        }
        Ok(TokenSeq { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_ids_must_be_in_vocab() {
        assert!(TokenSeq::new(vec![0, 1, 511], 512).is_ok());
        assert!(matches!(TokenSeq::new(vec![0, 512], 512), Err(Error::TokenOutOfRange { id: 512, vocab: 512 })));
    }
}
