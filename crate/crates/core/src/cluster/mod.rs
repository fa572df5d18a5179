//! Appliance orchestration: shards, per-core programs, the two-stage
//! generation loop, and cluster-wide statistics.

mod bound;
mod run;
mod stats;

pub use bound::{latency_model_check, LatencyBound};
pub use run::{emit_programs, run_generation, run_timing, RunOptions, RunOutput};
pub use stats::{RunStats, CSV_COLUMNS};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codegen::ShardSpec;
use crate::engine::LatencyTable;
use crate::error::{Error, Result};
use crate::memory::TileGeom;
use crate::model::GPTConfig;
use crate::network::RingLink;

/// Kernel clock of every core.
pub const CLOCK_HZ: u64 = 200_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n_cores: usize,
    pub model: GPTConfig,
    pub geom: TileGeom,
    pub link: RingLink,
    pub lat: LatencyTable,
    pub clock_hz: u64,
    /// A core that reaches a barrier this many cycles after the first one
    /// is treated as absent.
    pub sync_timeout: u64,
}

impl ClusterConfig {
    pub fn new(model: GPTConfig, n_cores: usize) -> Self {
        ClusterConfig {
            n_cores,
            model,
            geom: TileGeom::default(),
            link: RingLink::default(),
            lat: LatencyTable::default(),
            clock_hz: CLOCK_HZ,
            sync_timeout: 1 << 40,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if ![1, 2, 4, 8].contains(&self.n_cores) {
            return Err(Error::Config(format!("n_cores must be 1, 2, 4 or 8, got {}", self.n_cores)));
        }
        TileGeom::new(self.geom.d, self.geom.l, self.geom.bw_data)?;
        self.link.check()?;
        if !self.lat.all_positive() {
            return Err(Error::Config("latency table entries must be positive".into()));
        }
        if self.clock_hz == 0 {
            return Err(Error::Config("clock_hz must be positive".into()));
        }
        make_shards(&self.model, self.n_cores).map(|_| ())
    }

    /// Short stable digest of every modeled constant, for CSV rows.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Equal head-wise and column-wise splits, one per core.
pub fn make_shards(cfg: &GPTConfig, n_cores: usize) -> Result<Vec<ShardSpec>> {
    if n_cores == 0 {
        return Err(Error::Shard("zero cores".into()));
    }
    (0..n_cores).map(|i| ShardSpec::new(cfg, i, n_cores)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gpt2_medium_four_ways() {
        let s = make_shards(&GPTConfig::GPT2_345M, 4).unwrap();
        let heads: Vec<_> = s.iter().map(|s| s.head_range.clone()).collect();
        assert_eq!(heads, vec![0..4, 4..8, 8..12, 12..16]);
        let one = make_shards(&GPTConfig::GPT2_345M, 1).unwrap();
        assert_eq!(one[0].head_range, 0..16);
        assert_eq!(one[0].ffn1_cols, 0..4096);
    }

    #[test]
    fn config_checks() {
        assert!(ClusterConfig::new(GPTConfig::TINY, 2).validate().is_ok());
        assert!(ClusterConfig::new(GPTConfig::TINY, 3).validate().is_err());
        // Two heads cannot split four ways.
        assert!(ClusterConfig::new(GPTConfig::TINY, 4).validate().is_err());
        let mut c = ClusterConfig::new(GPTConfig::TINY, 1);
        let h = c.hash();
        assert_eq!(h.len(), 16);
        c.link.hop_latency = 65;
        assert_ne!(c.hash(), h);
    }

    proptest! {
        #[test]
        fn shards_cover_disjointly(k in 0usize..4, heads in 1usize..9) {
            let n = 1usize << k;
            let cfg = GPTConfig { emb: 64 * heads * n, n_head: heads * n, ..GPTConfig::TINY };
            let shards = make_shards(&cfg, n).unwrap();
            for m in crate::codegen::SHARDED_MATRICES {
                let total = if m == "wf1" { cfg.ffn_dim() } else { cfg.emb };
                let mut seen = vec![0u8; total];
                for s in &shards {
                    for c in s.cols(m).unwrap() {
                        seen[c] += 1;
                    }
                }
                prop_assert!(seen.iter().all(|&x| x == 1));
            }
            let mut h = vec![0u8; cfg.n_head];
            for s in &shards {
                for i in s.head_range.clone() {
                    h[i] += 1;
                }
            }
            prop_assert!(h.iter().all(|&x| x == 1));
        }
    }
}
