use serde::{Deserialize, Serialize};

use crate::isa::{ComputeOp, DmaOp, Instr, InstrShape};
use crate::memory::{ddr_cycles, TileGeom, DDR_BYTES_PER_CYCLE};

/// Pipeline latencies in cycles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyTable {
    pub mul: u64,
    pub add: u64,
    pub sub: u64,
    pub exp: u64,
    pub recip: u64,
    pub recip_sqrt: u64,
    /// Register bypass for `load`/`store`.
    pub load_store: u64,
    /// One comparator stage of the reduce-max tree.
    pub cmp: u64,
    /// Transpose unit on the Value write path.
    pub transpose: u64,
    /// One HBM write beat for a KV row.
    pub kv_write: u64,
    pub ddr_bytes_per_cycle: u64,
}

impl Default for LatencyTable {
    fn default() -> Self {
        LatencyTable {
            mul: 6,
            add: 11,
            sub: 11,
            exp: 4,
            recip: 11,
            recip_sqrt: 11,
            load_store: 1,
            cmp: 1,
            transpose: 64,
            kv_write: 1,
            ddr_bytes_per_cycle: DDR_BYTES_PER_CYCLE,
        }
    }
}

impl LatencyTable {
    pub fn all_positive(&self) -> bool {
        [
            self.mul,
            self.add,
            self.sub,
            self.exp,
            self.recip,
            self.recip_sqrt,
            self.load_store,
            self.cmp,
            self.kv_write,
            self.ddr_bytes_per_cycle,
        ]
        .iter()
        .all(|&v| v > 0)
    }

    pub fn tree_depth(&self, geom: &TileGeom) -> u64 {
        geom.d.next_power_of_two().trailing_zeros() as u64
    }

    /// Multiplier, adder tree, then the accumulating adder.
    pub fn matrix_fill(&self, geom: &TileGeom) -> u64 {
        self.mul + self.add * self.tree_depth(geom) + self.add
    }

    /// Cycles for one GELU lookup: slope multiply then add.
    pub fn gelu(&self) -> u64 {
        self.mul + self.add
    }
}

/// Functional unit an instruction occupies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Unit {
    Mfu,
    Vfu,
    HbmRead,
    HbmWrite,
    Ddr,
    Router,
}

pub fn unit_of(ins: &Instr) -> Unit {
    match ins {
        Instr::Compute { op, .. } if op.is_matrix() || *op == ComputeOp::Gelu => Unit::Mfu,
        Instr::Compute { .. } => Unit::Vfu,
        Instr::Dma { op: DmaOp::ReadWeights, .. } => Unit::HbmRead,
        Instr::Dma { op: DmaOp::WriteKv, .. } => Unit::HbmWrite,
        Instr::Dma { .. } => Unit::Ddr,
        Instr::Router { .. } => Unit::Router,
    }
}

/// Cost of one instruction in isolation, and when its first output chunk
/// is available, both relative to its start. Router costs come from the
/// network model and are 0 here.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cost {
    pub cycles: u64,
    pub first_out: u64,
}

pub fn cycle_cost(ins: &Instr, shape: &InstrShape, lat: &LatencyTable, geom: &TileGeom) -> Cost {
    let chunks = shape.n.div_ceil(geom.d) as u64;
    let vec = |l: u64| Cost { cycles: l + chunks, first_out: l + 1 };
    match ins {
        Instr::Compute { op, .. } => match op {
            ComputeOp::Conv1D | ComputeOp::MaskedMM | ComputeOp::MM => {
                let beats = geom.beats(shape.rows, shape.cols);
                let fill = lat.matrix_fill(geom);
                // First output band completes after its row chunks.
                let band = (shape.rows.div_ceil(geom.d) * geom.lane_groups()) as u64;
                Cost { cycles: beats + fill, first_out: fill + band.min(beats) }
            }
            ComputeOp::Add => vec(lat.add),
            ComputeOp::Sub => vec(lat.sub),
            ComputeOp::Mul => vec(lat.mul),
            ComputeOp::Exp => vec(lat.exp),
            ComputeOp::Recip => vec(lat.recip),
            ComputeOp::RecipSqrt => vec(lat.recip_sqrt),
            ComputeOp::Load | ComputeOp::Store => {
                let c = (lat.load_store * chunks).max(lat.load_store);
                Cost { cycles: c, first_out: lat.load_store }
            }
            ComputeOp::Accum => {
                let c = chunks + lat.add * lat.tree_depth(geom) + lat.add;
                Cost { cycles: c, first_out: c }
            }
            ComputeOp::ReduMax => {
                let c = chunks + lat.cmp * lat.tree_depth(geom);
                Cost { cycles: c, first_out: c }
            }
            ComputeOp::Gelu => {
                let issue = shape.n.div_ceil(geom.l) as u64;
                Cost { cycles: lat.gelu() + issue, first_out: lat.gelu() + 1 }
            }
        },
        Instr::Dma { op, .. } => match op {
            DmaOp::ReadWeights => {
                let beats = geom.beats(shape.rows, shape.cols);
                Cost { cycles: beats, first_out: 1.min(beats) }
            }
            DmaOp::ReadDdr | DmaOp::WriteDdr => {
                let c = ddr_cycles(shape.n, lat.ddr_bytes_per_cycle).max(1);
                Cost { cycles: c, first_out: 1 }
            }
            DmaOp::WriteKv => Cost { cycles: lat.kv_write, first_out: lat.kv_write },
        },
        Instr::Router { .. } => Cost { cycles: 0, first_out: 0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_asm;

    fn cost(src: &str, shape: InstrShape) -> u64 {
        let p = parse_asm(src).unwrap();
        cycle_cost(&p.instrs[0], &shape, &LatencyTable::default(), &TileGeom::default()).cycles
    }

    #[test]
    fn conv1d_1536_square() {
        let s = InstrShape { rows: 1536, cols: 1536, n: 1536 };
        assert_eq!(LatencyTable::default().matrix_fill(&TileGeom::default()), 83);
        assert_eq!(cost("conv1d v2, hbm:l0.wq, ddr:l0.bq x=v1", s), 2304 + 83);
    }

    #[test]
    fn vector_examples() {
        assert_eq!(cost("load v1, v2", InstrShape { n: 64, ..Default::default() }), 1);
        assert_eq!(cost("load v1, v2", InstrShape { n: 1, ..Default::default() }), 1);
        assert_eq!(cost("exp v1, v2", InstrShape { n: 64, ..Default::default() }), 4 + 1);
        assert_eq!(cost("add v1, v2, v3", InstrShape { n: 1024, ..Default::default() }), 11 + 16);
        assert_eq!(cost("dma.read_ddr ddr:l0.bq -> v1, 1024", InstrShape { n: 1024, ..Default::default() }), 11);
    }
}
