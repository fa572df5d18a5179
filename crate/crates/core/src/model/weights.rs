//! Dense, untiled, unsharded model parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::GPTConfig;
use super::fp16::Fp16;
use super::tensor::TensorF16;
use crate::error::{Error, Result};

/// Weight matrices are `input x output`; a linear layer computes `xA + b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerWeights {
    pub ln1_g: Vec<Fp16>,
    pub ln1_b: Vec<Fp16>,
    pub wq: TensorF16,
    pub bq: Vec<Fp16>,
    pub wk: TensorF16,
    pub bk: Vec<Fp16>,
    pub wv: TensorF16,
    pub bv: Vec<Fp16>,
    pub wa: TensorF16,
    pub ba: Vec<Fp16>,
    pub ln2_g: Vec<Fp16>,
    pub ln2_b: Vec<Fp16>,
    pub wf1: TensorF16,
    pub bf1: Vec<Fp16>,
    pub wf2: TensorF16,
    pub bf2: Vec<Fp16>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelWeights {
    pub cfg: GPTConfig,
    /// `vocab x emb`
    pub wte: TensorF16,
    /// `max_seq x emb`
    pub wpe: TensorF16,
    pub layers: Vec<LayerWeights>,
    pub lnf_g: Vec<Fp16>,
    pub lnf_b: Vec<Fp16>,
}

/// A named parameter in file order.
pub enum ParamRef<'a> {
    Matrix(&'a TensorF16),
    Vector(&'a [Fp16]),
}

impl ParamRef<'_> {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            ParamRef::Matrix(t) => t.shape(),
            ParamRef::Vector(v) => (1, v.len()),
        }
    }

    pub fn values(&self) -> &[Fp16] {
        match self {
            ParamRef::Matrix(t) => t.data(),
            ParamRef::Vector(v) => v,
        }
    }
}

impl LayerWeights {
    /// Parameter names in canonical order, with their shapes.
    pub fn manifest(cfg: &GPTConfig) -> Vec<(&'static str, usize, usize)> {
        let e = cfg.emb;
        let f = cfg.ffn_dim();
        vec![
            ("ln1_g", 1, e),
            ("ln1_b", 1, e),
            ("wq", e, e),
            ("bq", 1, e),
            ("wk", e, e),
            ("bk", 1, e),
            ("wv", e, e),
            ("bv", 1, e),
            ("wa", e, e),
            ("ba", 1, e),
            ("ln2_g", 1, e),
            ("ln2_b", 1, e),
            ("wf1", e, f),
            ("bf1", 1, f),
            ("wf2", f, e),
            ("bf2", 1, e),
        ]
    }

    pub fn param(&self, name: &str) -> Option<ParamRef<'_>> {
        use ParamRef::{Matrix as M, Vector as V};
        Some(match name {
            "ln1_g" => V(&self.ln1_g),
            "ln1_b" => V(&self.ln1_b),
            "wq" => M(&self.wq),
            "bq" => V(&self.bq),
            "wk" => M(&self.wk),
            "bk" => V(&self.bk),
            "wv" => M(&self.wv),
            "bv" => V(&self.bv),
            "wa" => M(&self.wa),
            "ba" => V(&self.ba),
            "ln2_g" => V(&self.ln2_g),
            "ln2_b" => V(&self.ln2_b),
            "wf1" => M(&self.wf1),
            "bf1" => V(&self.bf1),
            "wf2" => M(&self.wf2),
            "bf2" => V(&self.bf2),
            _ => return None,
        })
    }

    fn from_params(cfg: &GPTConfig, mut take: impl FnMut(&str, usize, usize) -> Result<Vec<Fp16>>) -> Result<Self> {
        let mut mat =
            |name: &str, r: usize, c: usize| -> Result<TensorF16> { TensorF16::from_vec(r, c, take(name, r, c)?) };
        let e = cfg.emb;
        let f = cfg.ffn_dim();
        // Field order follows `manifest`.
        let ln1_g = mat("ln1_g", 1, e)?.data().to_vec();
        let ln1_b = mat("ln1_b", 1, e)?.data().to_vec();
        let wq = mat("wq", e, e)?;
        let bq = mat("bq", 1, e)?.data().to_vec();
        let wk = mat("wk", e, e)?;
        let bk = mat("bk", 1, e)?.data().to_vec();
        let wv = mat("wv", e, e)?;
        let bv = mat("bv", 1, e)?.data().to_vec();
        let wa = mat("wa", e, e)?;
        let ba = mat("ba", 1, e)?.data().to_vec();
        let ln2_g = mat("ln2_g", 1, e)?.data().to_vec();
        let ln2_b = mat("ln2_b", 1, e)?.data().to_vec();
        let wf1 = mat("wf1", e, f)?;
        let bf1 = mat("bf1", 1, f)?.data().to_vec();
        let wf2 = mat("wf2", f, e)?;
        let bf2 = mat("bf2", 1, e)?.data().to_vec();
        Ok(LayerWeights { ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wa, ba, ln2_g, ln2_b, wf1, bf1, wf2, bf2 })
    }
}

impl ModelWeights {
    /// Full-model manifest: `(tag, rows, cols)` in file order.
    pub fn manifest(cfg: &GPTConfig) -> Vec<(String, usize, usize)> {
        let mut out = vec![("wte".to_string(), cfg.vocab, cfg.emb), ("wpe".to_string(), cfg.max_seq, cfg.emb)];
        for l in 0..cfg.n_layer {
            for (name, r, c) in LayerWeights::manifest(cfg) {
                out.push((format!("l{l}.{name}"), r, c));
            }
        }
        out.push(("lnf_g".into(), 1, cfg.emb));
        out.push(("lnf_b".into(), 1, cfg.emb));
        out
    }

    pub fn param(&self, tag: &str) -> Option<ParamRef<'_>> {
        match tag {
            "wte" => Some(ParamRef::Matrix(&self.wte)),
            "wpe" => Some(ParamRef::Matrix(&self.wpe)),
            "lnf_g" => Some(ParamRef::Vector(&self.lnf_g)),
            "lnf_b" => Some(ParamRef::Vector(&self.lnf_b)),
            _ => {
                let (layer, name) = tag.strip_prefix('l')?.split_once('.')?;
                self.layers.get(layer.parse::<usize>().ok()?)?.param(name)
            }
        }
    }

    /// Builds a model by pulling each manifest entry, in order, from `take`.
    pub fn from_params(cfg: GPTConfig, mut take: impl FnMut(&str, usize, usize) -> Result<Vec<Fp16>>) -> Result<Self> {
        cfg.validate()?;
        let wte = TensorF16::from_vec(cfg.vocab, cfg.emb, take("wte", cfg.vocab, cfg.emb)?)?;
        let wpe = TensorF16::from_vec(cfg.max_seq, cfg.emb, take("wpe", cfg.max_seq, cfg.emb)?)?;
        let mut layers = Vec::with_capacity(cfg.n_layer);
        for l in 0..cfg.n_layer {
            layers.push(LayerWeights::from_params(&cfg, |name, r, c| take(&format!("l{l}.{name}"), r, c))?);
        }
        let lnf_g = take("lnf_g", 1, cfg.emb)?;
        let lnf_b = take("lnf_b", 1, cfg.emb)?;
        if lnf_g.len() != cfg.emb || lnf_b.len() != cfg.emb {
            return Err(Error::DimensionMismatch { op: "lnf", expected: cfg.emb, got: lnf_g.len().min(lnf_b.len()) });
        }
        Ok(ModelWeights { cfg, wte, wpe, layers, lnf_g, lnf_b })
    }

    /// Seeded random weights: matrices and biases drawn from N(0, std),
    /// layernorm gains 1 and shifts 0.
    pub fn random(cfg: GPTConfig, seed: u64, std: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Self::from_params(cfg, |tag, r, c| {
            let n = r * c;
            let name = tag.rsplit('.').next().unwrap_or(tag);
            Ok(if name.ends_with("_g") {
                vec![Fp16::ONE; n]
            } else if name.ends_with("_b") && name.starts_with("ln") {
                vec![Fp16::ZERO; n]
            } else {
                (0..n).map(|_| Fp16::from_f64(normal.sample(&mut rng))).collect()
            })
        })
    }
}
