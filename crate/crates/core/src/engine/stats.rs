use std::fmt;

use serde::Serialize;

use super::latency::Unit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Qkv,
    Attention,
    Ffn,
    LayernormResidual,
    Sync,
    LmHead,
    Embedding,
    DmaOther,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Qkv,
        Category::Attention,
        Category::Ffn,
        Category::LayernormResidual,
        Category::Sync,
        Category::LmHead,
        Category::Embedding,
        Category::DmaOther,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Qkv => "qkv",
            Category::Attention => "attention",
            Category::Ffn => "ffn",
            Category::LayernormResidual => "layernorm_residual",
            Category::Sync => "sync",
            Category::LmHead => "lm_head",
            Category::Embedding => "embedding",
            Category::DmaOther => "dma_other",
        }
    }

    /// Unlabelled or unknown sections count as `dma_other`.
    pub fn from_section(s: Option<&str>) -> Category {
        s.and_then(|s| Category::ALL.into_iter().find(|c| c.name() == s)).unwrap_or(Category::DmaOther)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cycles on the critical path, split by category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Breakdown(pub [u64; 8]);

impl Breakdown {
    pub fn get(&self, c: Category) -> u64 {
        self.0[c.index()]
    }

    pub fn add(&mut self, c: Category, cycles: u64) {
        self.0[c.index()] += cycles;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoreStats {
    pub breakdown: Breakdown,
    /// Completion time of the last instruction.
    pub total_cycles: u64,
    pub instrs: u64,
    /// Reads scheduled before their producer's data was available.
    pub stale_reads: u64,
    /// Value-cache reads delayed by a pending transposed write.
    pub value_transpose_stalls: u64,
    pub value_transpose_stall_cycles: u64,
    /// Infinite or NaN results from `recip`/`recip_sqrt`.
    pub nonfinite_results: u64,
    /// Busy cycles per unit, by `Unit` order.
    pub unit_busy: [u64; 6],
}

impl CoreStats {
    pub fn busy(&self, u: Unit) -> u64 {
        self.unit_busy[u as usize]
    }
}
