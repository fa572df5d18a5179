use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::engine::{Breakdown, Category};
use crate::error::Result;

/// CSV schema, one row per run.
pub const CSV_COLUMNS: [&str; 14] = [
    "config_hash",
    "n_in",
    "n_out",
    "n_cores",
    "total_cycles",
    "qkv",
    "attention",
    "ffn",
    "layernorm_residual",
    "sync",
    "lm_head",
    "embedding",
    "dma_other",
    "tokens_per_sec_modeled",
];

/// Cluster-wide accounting of one run. Category cycles follow the slowest
/// core between consecutive barriers, so they sum to `total_cycles`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunStats {
    pub config_hash: String,
    pub n_in: usize,
    pub n_out: usize,
    pub n_cores: usize,
    pub total_cycles: u64,
    pub breakdown: Breakdown,
    pub clock_hz: u64,
    pub syncs: u64,
    pub stale_reads: u64,
    pub value_transpose_stalls: u64,
    pub nonfinite_results: u64,
    /// Completion time of each core.
    pub core_cycles: Vec<u64>,
}

impl RunStats {
    pub fn wall_time_s(&self) -> f64 {
        self.total_cycles as f64 / self.clock_hz as f64
    }

    pub fn tokens_per_sec(&self) -> f64 {
        if self.total_cycles == 0 {
            return 0.0;
        }
        self.n_out as f64 / self.wall_time_s()
    }

    pub fn ms_per_token(&self) -> f64 {
        self.wall_time_s() * 1e3 / self.n_out.max(1) as f64
    }

    pub fn share(&self, c: Category) -> f64 {
        self.breakdown.get(c) as f64 / self.total_cycles.max(1) as f64
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut r = vec![
            self.config_hash.clone(),
            self.n_in.to_string(),
            self.n_out.to_string(),
            self.n_cores.to_string(),
            self.total_cycles.to_string(),
        ];
        r.extend(Category::ALL.iter().map(|&c| self.breakdown.get(c).to_string()));
        r.push(format!("{:.4}", self.tokens_per_sec()));
        r
    }

    /// Header plus one row per run.
    pub fn write_csv<W: Write>(w: W, runs: &[RunStats]) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_COLUMNS)?;
        for r in runs {
            out.write_record(r.csv_record())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} cores, {} in / {} out: {} cycles, {:.3} ms, {:.2} tokens/s",
            self.n_cores,
            self.n_in,
            self.n_out,
            self.total_cycles,
            self.wall_time_s() * 1e3,
            self.tokens_per_sec()
        );
        for c in Category::ALL {
            let _ = writeln!(s, "  {:<20} {:>14} {:>6.1}%", c.name(), self.breakdown.get(c), 100.0 * self.share(c));
        }
        let _ = writeln!(
            s,
            "  syncs {}, stale reads {}, value-transpose stalls {}",
            self.syncs, self.stale_reads, self.value_transpose_stalls
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_schema() {
        let mut b = Breakdown::default();
        b.add(Category::Ffn, 150_000_000);
        b.add(Category::Sync, 50_000_000);
        let r = RunStats {
            config_hash: "abc".into(),
            n_in: 4,
            n_out: 2,
            n_cores: 2,
            total_cycles: 200_000_000,
            breakdown: b,
            clock_hz: 200_000_000,
            syncs: 0,
            stale_reads: 0,
            value_transpose_stalls: 0,
            nonfinite_results: 0,
            core_cycles: vec![],
        };
        assert_eq!(r.tokens_per_sec(), 2.0);
        let mut buf = Vec::new();
        RunStats::write_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert_eq!(lines[1], "abc,4,2,2,200000000,0,0,150000000,0,50000000,0,0,0,2.0000");
    }
}
