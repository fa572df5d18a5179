use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// GPT-2 hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GPTConfig {
    pub emb: usize,
    pub n_head: usize,
    pub d_head: usize,
    pub n_layer: usize,
    pub vocab: usize,
    pub ffn_mult: usize,
    pub max_seq: usize,
}

const GPT2_VOCAB: usize = 50257;
const GPT2_MAX_SEQ: usize = 1024;

impl GPTConfig {
    const fn preset(emb: usize, n_head: usize, n_layer: usize, vocab: usize) -> Self {
        GPTConfig { emb, n_head, d_head: 64, n_layer, vocab, ffn_mult: 4, max_seq: GPT2_MAX_SEQ }
    }

    pub const GPT2_345M: GPTConfig = GPTConfig::preset(1024, 16, 24, GPT2_VOCAB);
    pub const GPT2_774M: GPTConfig = GPTConfig::preset(1280, 20, 36, GPT2_VOCAB);
    pub const GPT2_1_5B: GPTConfig = GPTConfig::preset(1536, 24, 48, GPT2_VOCAB);
    /// Desk-scale model used by the equivalence tests.
    pub const TINY: GPTConfig = GPTConfig::preset(128, 2, 2, 512);
    /// Desk-scale model with four heads, so it shards four ways.
    pub const TINY4: GPTConfig = GPTConfig::preset(256, 4, 2, 512);

    /// Resolves a preset name (`345M`, `774M`, `1.5B`, `tiny`, `tiny4`) or a
    /// custom literal such as `emb=256,n_head=4,n_layer=2,vocab=1000`.
    /// Missing custom keys default to the GPT-2 conventions.
    pub fn for_name(name: &str) -> Result<GPTConfig> {
        let cfg = match name {
            "345M" => Self::GPT2_345M,
            "774M" => Self::GPT2_774M,
            "1.5B" => Self::GPT2_1_5B,
            "tiny" => Self::TINY,
            "tiny4" => Self::TINY4,
            lit if lit.contains('=') => return Self::parse_literal(lit),
            other => return Err(Error::UnknownPreset(other.to_string())),
        };
        Ok(cfg)
    }

    fn parse_literal(lit: &str) -> Result<GPTConfig> {
        let mut cfg = GPTConfig {
            emb: 0,
            n_head: 0,
            d_head: 0,
            n_layer: 1,
            vocab: GPT2_VOCAB,
            ffn_mult: 4,
            max_seq: GPT2_MAX_SEQ,
        };
        for kv in lit.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) =
                kv.split_once('=').ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got `{kv}`")))?;
            let value: usize =
                value.trim().parse().map_err(|_| Error::InvalidConfig(format!("`{kv}` is not an integer")))?;
            match key.trim() {
                "emb" => cfg.emb = value,
                "n_head" => cfg.n_head = value,
                "d_head" => cfg.d_head = value,
                "n_layer" => cfg.n_layer = value,
                "vocab" => cfg.vocab = value,
                "ffn_mult" => cfg.ffn_mult = value,
                "max_seq" => cfg.max_seq = value,
                other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
            }
        }
        if cfg.d_head == 0 && cfg.n_head > 0 {
            if cfg.emb % cfg.n_head != 0 {
                return Err(Error::InvalidConfig(format!("emb {} not divisible by n_head {}", cfg.emb, cfg.n_head)));
            }
            cfg.d_head = cfg.emb / cfg.n_head;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_head == 0 || self.d_head == 0 || self.emb == 0 {
            return bad("emb, n_head and d_head must be positive".into());
        }
        if self.emb % self.n_head != 0 {
            return bad(format!("emb {} not divisible by n_head {}", self.emb, self.n_head));
        }
        if self.emb != self.n_head * self.d_head {
            return bad(format!("emb {} != n_head {} x d_head {}", self.emb, self.n_head, self.d_head));
        }
        if self.n_layer < 1 {
            return bad("n_layer must be >= 1".into());
        }
        if self.vocab < 2 {
            return bad("vocab must be >= 2".into());
        }
        if self.max_seq < 1 {
            return bad("max_seq must be >= 1".into());
        }
        if self.ffn_mult < 1 {
            return bad("ffn_mult must be >= 1".into());
        }
        Ok(())
    }

    #[inline]
    pub fn ffn_dim(&self) -> usize {
        self.emb * self.ffn_mult
    }

    /// Parameter count of the full model as laid out in a weight file.
    pub fn param_count(&self) -> usize {
        let e = self.emb;
        let f = self.ffn_dim();
        let per_layer = 4 * e * e + 4 * e // q, k, v, attn-proj with biases
            + e * f + f + f * e + e        // ffn
            + 4 * e; // two layernorms
        self.vocab * e + self.max_seq * e + self.n_layer * per_layer + 2 * e
    }
}
