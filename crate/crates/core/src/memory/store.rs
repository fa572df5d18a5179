use std::collections::HashMap;

use super::tag::{DdrTag, HbmTag, LAYER_WEIGHTS};
use super::tile::{BeatCoord, TileGeom, TiledMatrix};
use crate::codegen::ShardSpec;
use crate::error::{Error, Result};
use crate::model::{Fp16, GPTConfig, KVCache, ModelWeights, TensorF16};

/// 38 GB/s at a 200 MHz core clock.
pub const DDR_BYTES_PER_CYCLE: u64 = 190;

/// Cycles to move `n` FP16 elements over DDR.
pub fn ddr_cycles(n: usize, bytes_per_cycle: u64) -> u64 {
    (2 * n as u64).div_ceil(bytes_per_cycle)
}

/// Shapes of every off-chip symbol one core can address.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolTable {
    pub cfg: GPTConfig,
    pub shard: ShardSpec,
}

impl SymbolTable {
    pub fn new(cfg: GPTConfig, shard: ShardSpec) -> Self {
        SymbolTable { cfg, shard }
    }

    fn layer_ok(&self, layer: usize) -> Result<()> {
        if layer < self.cfg.n_layer {
            Ok(())
        } else {
            Err(Error::UnknownTag(format!("layer {layer} >= n_layer {}", self.cfg.n_layer)))
        }
    }

    fn local_width(&self, name: &str) -> usize {
        self.shard.cols(name).map_or(0, |r| r.len())
    }

    /// `(rows, cols)` of an HBM symbol. KV entries report their capacity
    /// (`d_head x max_seq`).
    pub fn hbm_shape(&self, tag: &HbmTag) -> Result<(usize, usize)> {
        let c = &self.cfg;
        match tag {
            HbmTag::Weight { layer, name } => {
                self.layer_ok(*layer)?;
                let rows = if name == "wf2" { c.ffn_dim() } else { c.emb };
                Ok((rows, self.local_width(name)))
            }
            HbmTag::WteT => Ok((c.emb, c.vocab)),
            HbmTag::KeyT { layer, head } | HbmTag::ValueT { layer, head } => {
                self.layer_ok(*layer)?;
                if !self.shard.owns_head(*head) {
                    return Err(Error::UnknownTag(format!("{tag}: head not owned by core {}", self.shard.core_id)));
                }
                Ok((c.d_head, c.max_seq))
            }
            HbmTag::Symbol(_) => Err(Error::UnknownTag(tag.to_string())),
        }
    }

    /// Element count of a DDR symbol; `None` for free-form scratch.
    pub fn ddr_len(&self, tag: &DdrTag) -> Result<Option<usize>> {
        let c = &self.cfg;
        let pos_ok = |p: usize| {
            if p < c.max_seq {
                Ok(())
            } else {
                Err(Error::UnknownTag(format!("{tag}: position beyond max_seq {}", c.max_seq)))
            }
        };
        Ok(Some(match tag {
            DdrTag::WteRow { slot } | DdrTag::Tok { slot } => {
                pos_ok(*slot)?;
                if matches!(tag, DdrTag::Tok { .. }) {
                    1
                } else {
                    c.emb
                }
            }
            DdrTag::WpeRow { pos } => {
                pos_ok(*pos)?;
                c.emb
            }
            DdrTag::Act { pos, layer } => {
                pos_ok(*pos)?;
                self.layer_ok(*layer)?;
                c.emb
            }
            DdrTag::LayerParam { layer, name } => {
                self.layer_ok(*layer)?;
                match name.as_str() {
                    "bq" => self.local_width("wq"),
                    "bk" => self.local_width("wk"),
                    "bv" => self.local_width("wv"),
                    "ba" => self.local_width("wa"),
                    "bf1" => self.local_width("wf1"),
                    "bf2" => self.local_width("wf2"),
                    _ => c.emb,
                }
            }
            DdrTag::Final(_) => c.emb,
            DdrTag::Const(_) => 1,
            DdrTag::Scratch(_) => return Ok(None),
            DdrTag::Symbol(_) => return Err(Error::UnknownTag(tag.to_string())),
        }))
    }
}

/// Tiled weight shards resident in HBM.
#[derive(Clone, Debug)]
pub struct WeightStore {
    geom: TileGeom,
    mats: HashMap<HbmTag, TiledMatrix>,
}

impl WeightStore {
    pub fn load(w: &ModelWeights, shard: &ShardSpec, geom: TileGeom) -> Self {
        let mut mats = HashMap::new();
        for (l, lw) in w.layers.iter().enumerate() {
            for name in LAYER_WEIGHTS {
                let cols = shard.cols(name).expect("layer weights are sharded");
                let dense = match lw.param(name) {
                    Some(crate::model::ParamRef::Matrix(m)) => m.col_slice(cols.start, cols.end),
                    _ => unreachable!("{name} is a matrix"),
                };
                mats.insert(
                    HbmTag::Weight { layer: l, name: name.to_string() },
                    TiledMatrix::from_dense(&dense, cols.start, geom),
                );
            }
        }
        mats.insert(HbmTag::WteT, TiledMatrix::from_dense(&w.wte.transpose(), 0, geom));
        WeightStore { geom, mats }
    }

    pub fn geom(&self) -> &TileGeom {
        &self.geom
    }

    pub fn get(&self, tag: &HbmTag) -> Result<&TiledMatrix> {
        self.mats.get(tag).ok_or_else(|| Error::UnknownTag(tag.to_string()))
    }

    /// Beats of one matrix in traversal order, one per cycle at peak bandwidth.
    pub fn dma_stream_weights(&self, tag: &HbmTag) -> Result<impl Iterator<Item = (u64, BeatCoord, &[Fp16])> + '_> {
        let m = self.get(tag)?;
        Ok((0..m.n_beats()).map(move |i| {
            let (c, data) = m.beat(i);
            (i as u64, c, data)
        }))
    }
}

/// Writes one Value row into the transposed cache; the transpose unit sits
/// in the DMA write path.
pub fn dma_write_value_transposed(cache: &mut KVCache, layer: usize, head: usize, rows: &[Vec<Fp16>]) -> Result<()> {
    for r in rows {
        cache.append_value(layer, head, r)?;
    }
    Ok(())
}

/// DDR-resident parameters, token buffer and scratch space.
#[derive(Clone, Debug)]
pub struct DdrStore {
    table: SymbolTable,
    wte: TensorF16,
    wpe: TensorF16,
    params: HashMap<DdrTag, Vec<Fp16>>,
    tokens: Vec<Option<u32>>,
    scratch: HashMap<DdrTag, Vec<Fp16>>,
    pub bytes_per_cycle: u64,
}

impl DdrStore {
    pub fn load(w: &ModelWeights, shard: &ShardSpec) -> Self {
        let cfg = w.cfg;
        let mut params = HashMap::new();
        for (l, lw) in w.layers.iter().enumerate() {
            for name in super::tag::LAYER_PARAMS {
                let full = lw.param(name).expect("manifest parameter").values().to_vec();
                let owner = match name {
                    "bq" => Some("wq"),
                    "bk" => Some("wk"),
                    "bv" => Some("wv"),
                    "ba" => Some("wa"),
                    "bf1" => Some("wf1"),
                    "bf2" => Some("wf2"),
                    _ => None,
                };
                let v = match owner.and_then(|m| shard.cols(m)) {
                    Some(r) => full[r].to_vec(),
                    None => full,
                };
                params.insert(DdrTag::LayerParam { layer: l, name: name.to_string() }, v);
            }
        }
        params.insert(DdrTag::Final("lnf_g".into()), w.lnf_g.clone());
        params.insert(DdrTag::Final("lnf_b".into()), w.lnf_b.clone());
        params.insert(DdrTag::Const("inv_emb".into()), vec![Fp16::from_f64(1.0 / cfg.emb as f64)]);
        params.insert(DdrTag::Const("eps".into()), vec![Fp16::from_f64(crate::model::LN_EPS)]);
        DdrStore {
            table: SymbolTable::new(cfg, shard.clone()),
            wte: w.wte.clone(),
            wpe: w.wpe.clone(),
            params,
            tokens: vec![None; cfg.max_seq],
            scratch: HashMap::new(),
            bytes_per_cycle: DDR_BYTES_PER_CYCLE,
        }
    }

    pub fn symbols(&self) -> &SymbolTable {
        &self.table
    }

    pub fn cycles(&self, n_elems: usize) -> u64 {
        ddr_cycles(n_elems, self.bytes_per_cycle)
    }

    pub fn read_token(&self, slot: usize) -> Result<u32> {
        self.tokens
            .get(slot)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Operand(format!("token slot {slot} read before it was written")))
    }

    pub fn write_token(&mut self, slot: usize, id: u32) -> Result<()> {
        let vocab = self.table.cfg.vocab;
        if id as usize >= vocab {
            return Err(Error::TokenOutOfRange { id, vocab });
        }
        let max_seq = self.tokens.len();
        *self.tokens.get_mut(slot).ok_or(Error::SeqOverflow { len: slot + 1, max_seq })? = Some(id);
        Ok(())
    }

    pub fn tokens(&self) -> impl Iterator<Item = Option<u32>> + '_ {
        self.tokens.iter().copied()
    }

    /// Reads a vector symbol, returning its data and DDR cycle cost.
    pub fn ddr_access(&self, tag: &DdrTag) -> Result<(Vec<Fp16>, u64)> {
        let data = match tag {
            DdrTag::WteRow { slot } => {
                let id = self.read_token(*slot)?;
                self.wte.row(id as usize).to_vec()
            }
            DdrTag::WpeRow { pos } => {
                self.table.ddr_len(tag)?;
                self.wpe.row(*pos).to_vec()
            }
            DdrTag::Tok { .. } => return Err(Error::Operand(format!("{tag} holds a token id, not a vector"))),
            DdrTag::Act { .. } | DdrTag::Scratch(_) => {
                self.scratch.get(tag).cloned().ok_or_else(|| Error::UnknownTag(tag.to_string()))?
            }
            _ => self.params.get(tag).cloned().ok_or_else(|| Error::UnknownTag(tag.to_string()))?,
        };
        let cost = self.cycles(data.len());
        Ok((data, cost))
    }

    /// Writes a vector to DDR scratch space (`act.*`, `scratch.*`).
    pub fn write(&mut self, tag: &DdrTag, data: Vec<Fp16>) -> Result<u64> {
        if let Some(n) = self.table.ddr_len(tag)? {
            if !matches!(tag, DdrTag::Act { .. }) {
                return Err(Error::Operand(format!("{tag} is read-only")));
            }
            if n != data.len() {
                return Err(Error::DimensionMismatch { op: "write_ddr", expected: n, got: data.len() });
            }
        }
        let cost = self.cycles(data.len());
        self.scratch.insert(tag.clone(), data);
        Ok(cost)
    }

    pub fn scratch(&self, tag: &DdrTag) -> Option<&[Fp16]> {
        self.scratch.get(tag).map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ddr_cost_examples() {
        assert_eq!(ddr_cycles(1024, DDR_BYTES_PER_CYCLE), 11);
        assert_eq!(ddr_cycles(0, DDR_BYTES_PER_CYCLE), 0);
    }

    #[test]
    fn stores_hold_only_the_shard() {
        let cfg = GPTConfig::TINY;
        let w = ModelWeights::random(cfg, 5, 0.02).unwrap();
        let shard = ShardSpec::new(&cfg, 1, 2).unwrap();
        let ws = WeightStore::load(&w, &shard, TileGeom::default());
        let wq = ws.get(&"l0.wq".parse().unwrap()).unwrap();
        assert_eq!(wq.shape(), (128, 64));
        assert_eq!(wq.col_offset, 64);
        assert_eq!(wq.to_dense(), w.layers[0].wq.col_slice(64, 128));
        let wf2 = ws.get(&"l1.wf2".parse().unwrap()).unwrap();
        assert_eq!(wf2.element_count(), 512 * 64);

        let ddr = DdrStore::load(&w, &shard);
        let (bq, cost) = ddr.ddr_access(&"l0.bq".parse().unwrap()).unwrap();
        assert_eq!(bq, w.layers[0].bq[64..].to_vec());
        assert_eq!(cost, 1);
        let (g, _) = ddr.ddr_access(&"l0.ln1_g".parse().unwrap()).unwrap();
        assert_eq!(g.len(), 128);
    }

    #[test]
    fn weight_stream_is_unit_stride() {
        let cfg = GPTConfig::TINY;
        let w = ModelWeights::random(cfg, 5, 0.02).unwrap();
        let ws = WeightStore::load(&w, &ShardSpec::single(&cfg), TileGeom::default());
        let stamps: Vec<u64> = ws.dma_stream_weights(&"l0.wv".parse().unwrap()).unwrap().map(|(c, _, _)| c).collect();
        assert_eq!(stamps, (0..16).collect::<Vec<_>>());
        assert!(ws.dma_stream_weights(&"l9.wv".parse().unwrap()).is_err());
    }

    #[test]
    fn wte_rows_follow_the_token_buffer() {
        let cfg = GPTConfig::TINY;
        let w = ModelWeights::random(cfg, 5, 0.02).unwrap();
        let mut ddr = DdrStore::load(&w, &ShardSpec::single(&cfg));
        let tag: DdrTag = "wte[tok.0]".parse().unwrap();
        assert!(ddr.ddr_access(&tag).is_err());
        ddr.write_token(0, 7).unwrap();
        assert_eq!(ddr.ddr_access(&tag).unwrap().0, w.wte.row(7).to_vec());
        assert!(ddr.write_token(1, 512).is_err());
    }

    #[test]
    fn value_rows_land_transposed() {
        let mut kv = KVCache::new(1, 1, 64, 16);
        let row: Vec<Fp16> = (1..=64).map(|i| Fp16::from_f64(i as f64)).collect();
        dma_write_value_transposed(&mut kv, 0, 0, &[row.clone(), row.clone()]).unwrap();
        let vt = kv.value_t(0, 0);
        assert_eq!(vt.shape(), (64, 2));
        for i in 0..64 {
            assert_eq!(vt.get(i, 1), row[i]);
        }
    }
}
