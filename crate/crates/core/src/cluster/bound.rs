use super::ClusterConfig;
use crate::codegen::{n_passes, ShardSpec, SHARDED_MATRICES};
use crate::error::Result;
use crate::memory::{HbmTag, SymbolTable};

/// Memory-bound lower bound on a run's cycles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatencyBound {
    /// Weight beats one core streams for all layers of one token pass.
    pub layer_beats_per_pass: u64,
    /// Beats of the (unsharded) LM head, paid once per output token.
    pub lm_head_beats: u64,
    /// Ring cycles of one pass's barriers.
    pub sync_per_pass: u64,
    pub passes: u64,
    pub cycles: u64,
}

impl LatencyBound {
    pub fn ms_per_token(&self, cluster: &ClusterConfig, n_out: usize) -> f64 {
        self.cycles as f64 / cluster.clock_hz as f64 * 1e3 / n_out.max(1) as f64
    }
}

/// Every weight beat must stream through the matrix unit, and every barrier
/// sits between dependent matrix ops, so no schedule beats this.
pub fn latency_model_check(cluster: &ClusterConfig, n_in: usize, n_out: usize) -> Result<LatencyBound> {
    cluster.validate()?;
    let cfg = cluster.model;
    let geom = cluster.geom;
    // Every core has the same share; core 0 stands for all.
    let shard = ShardSpec::new(&cfg, 0, cluster.n_cores)?;
    let syms = SymbolTable::new(cfg, shard.clone());
    let mut per_layer = 0;
    for m in SHARDED_MATRICES {
        let (r, c) = syms.hbm_shape(&HbmTag::Weight { layer: 0, name: m.into() })?;
        per_layer += geom.beats(r, c);
    }
    let lm_head_beats = geom.beats(cfg.emb, cfg.vocab);
    let bits = geom.bw_data as u64;
    let n = cluster.n_cores;
    let link = &cluster.link;
    let sync_per_layer = link.all_gather_cycles(n, shard.n_local_heads() * cfg.d_head, bits)
        + link.all_gather_cycles(n, shard.attn_cols.len(), bits)
        + link.all_gather_cycles(n, shard.ffn1_cols.len(), bits)
        + link.all_gather_cycles(n, shard.ffn2_cols.len(), bits);
    let passes = n_passes(n_in, n_out) as u64;
    let layer_beats_per_pass = per_layer * cfg.n_layer as u64;
    let sync_per_pass = sync_per_layer * cfg.n_layer as u64;
    Ok(LatencyBound {
        layer_beats_per_pass,
        lm_head_beats,
        sync_per_pass,
        passes,
        cycles: passes * (layer_beats_per_pass + sync_per_pass) + n_out as u64 * lm_head_beats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GPTConfig;

    #[test]
    fn gpt2_medium_single_core() {
        let c = ClusterConfig::new(GPTConfig::GPT2_345M, 1);
        let b = latency_model_check(&c, 64, 64).unwrap();
        // 12 emb^2 weights per layer at 1024 per beat.
        assert_eq!(b.layer_beats_per_pass, 24 * 12 * 1024);
        assert_eq!(b.lm_head_beats, 50257_u64.div_ceil(16) * 16);
        assert_eq!(b.sync_per_pass, 0);
        assert_eq!(b.passes, 127);
    }

    #[test]
    fn sharding_divides_weight_beats() {
        let one = latency_model_check(&ClusterConfig::new(GPTConfig::GPT2_345M, 1), 8, 8).unwrap();
        let four = latency_model_check(&ClusterConfig::new(GPTConfig::GPT2_345M, 4), 8, 8).unwrap();
        assert_eq!(four.layer_beats_per_pass * 4, one.layer_beats_per_pass);
        assert!(four.sync_per_pass > 0);
    }
}
