use std::fmt;

use crate::memory::{DdrTag, HbmTag};

/// Vector-register file size.
pub const N_VREGS: usize = 64;
/// Scalar-register file size.
pub const N_SREGS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ComputeOp {
    Conv1D,
    MaskedMM,
    MM,
    Add,
    Sub,
    Mul,
    Accum,
    RecipSqrt,
    Recip,
    Exp,
    Load,
    Store,
    Gelu,
    ReduMax,
}

impl ComputeOp {
    pub const ALL: [ComputeOp; 14] = [
        ComputeOp::Conv1D,
        ComputeOp::MaskedMM,
        ComputeOp::MM,
        ComputeOp::Add,
        ComputeOp::Sub,
        ComputeOp::Mul,
        ComputeOp::Accum,
        ComputeOp::RecipSqrt,
        ComputeOp::Recip,
        ComputeOp::Exp,
        ComputeOp::Load,
        ComputeOp::Store,
        ComputeOp::Gelu,
        ComputeOp::ReduMax,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            ComputeOp::Conv1D => "conv1d",
            ComputeOp::MaskedMM => "maskedmm",
            ComputeOp::MM => "mm",
            ComputeOp::Add => "add",
            ComputeOp::Sub => "sub",
            ComputeOp::Mul => "mul",
            ComputeOp::Accum => "accum",
            ComputeOp::RecipSqrt => "recip_sqrt",
            ComputeOp::Recip => "recip",
            ComputeOp::Exp => "exp",
            ComputeOp::Load => "load",
            ComputeOp::Store => "store",
            ComputeOp::Gelu => "gelu",
            ComputeOp::ReduMax => "redu_max",
        }
    }

    /// Runs on the matrix function unit.
    pub fn is_matrix(self) -> bool {
        matches!(self, ComputeOp::Conv1D | ComputeOp::MaskedMM | ComputeOp::MM)
    }

    pub fn is_binary(self) -> bool {
        self.is_matrix() || matches!(self, ComputeOp::Add | ComputeOp::Sub | ComputeOp::Mul)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DmaOp {
    ReadWeights,
    ReadDdr,
    WriteKv,
    WriteDdr,
}

impl DmaOp {
    pub const ALL: [DmaOp; 4] = [DmaOp::ReadWeights, DmaOp::ReadDdr, DmaOp::WriteKv, DmaOp::WriteDdr];

    pub fn mnemonic(self) -> &'static str {
        match self {
            DmaOp::ReadWeights => "dma.read_weights",
            DmaOp::ReadDdr => "dma.read_ddr",
            DmaOp::WriteKv => "dma.write_kv",
            DmaOp::WriteDdr => "dma.write_ddr",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RouterOp {
    Send,
    Recv,
}

impl RouterOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            RouterOp::Send => "router.send",
            RouterOp::Recv => "router.recv",
        }
    }
}

/// Where an operand lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loc {
    OffChip,
    RegisterFile,
    Unit,
}

/// A vector register, optionally restricted to `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VReg {
    pub idx: usize,
    pub slice: Option<(usize, usize)>,
}

impl VReg {
    pub fn whole(idx: usize) -> Self {
        VReg { idx, slice: None }
    }

    pub fn slice(idx: usize, start: usize, end: usize) -> Self {
        VReg { idx, slice: Some((start, end)) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Hbm(HbmTag),
    Ddr(DdrTag),
    V(VReg),
    S(usize),
    Peer,
    /// The matrix unit's weight-stream port.
    Mfu,
}

impl Operand {
    pub fn loc(&self) -> Loc {
        match self {
            Operand::Hbm(_) | Operand::Ddr(_) => Loc::OffChip,
            Operand::V(_) | Operand::S(_) => Loc::RegisterFile,
            Operand::Peer | Operand::Mfu => Loc::Unit,
        }
    }

    pub fn v(idx: usize) -> Self {
        Operand::V(VReg::whole(idx))
    }

    pub fn vs(idx: usize, start: usize, end: usize) -> Self {
        Operand::V(VReg::slice(idx, start, end))
    }

    pub fn is_reg(&self) -> bool {
        matches!(self, Operand::V(_) | Operand::S(_))
    }
}

/// Optional modifiers on compute instructions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Flags {
    /// Input vector of a `conv1d`.
    pub x: Option<VReg>,
    /// Query position for `maskedmm`; columns past it are masked.
    pub tok: Option<usize>,
    /// `redu_max` returns the index instead of the value.
    pub argmax: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Instr {
    Compute { op: ComputeOp, dst: Operand, src1: Operand, src2: Option<Operand>, flags: Flags },
    Dma { op: DmaOp, src: Operand, dst: Operand, xfer_size: usize },
    Router { op: RouterOp, src: Operand, dst: Operand, xfer_size: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InstrKind {
    Compute,
    Dma,
    Router,
}

impl Instr {
    pub fn kind(&self) -> InstrKind {
        match self {
            Instr::Compute { .. } => InstrKind::Compute,
            Instr::Dma { .. } => InstrKind::Dma,
            Instr::Router { .. } => InstrKind::Router,
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instr::Compute { op, .. } => op.mnemonic(),
            Instr::Dma { op, .. } => op.mnemonic(),
            Instr::Router { op, .. } => op.mnemonic(),
        }
    }

    pub fn compute(op: ComputeOp, dst: Operand, src1: Operand, src2: Option<Operand>) -> Self {
        Instr::Compute { op, dst, src1, src2, flags: Flags::default() }
    }

    pub fn with_flags(self, f: Flags) -> Self {
        match self {
            Instr::Compute { op, dst, src1, src2, .. } => Instr::Compute { op, dst, src1, src2, flags: f },
            other => other,
        }
    }

    pub fn dma(op: DmaOp, src: Operand, dst: Operand, xfer_size: usize) -> Self {
        Instr::Dma { op, src, dst, xfer_size }
    }

    pub fn router(op: RouterOp, src: Operand, dst: Operand, xfer_size: usize) -> Self {
        Instr::Router { op, src, dst, xfer_size }
    }

    /// Register operands read by this instruction.
    pub fn reads(&self) -> Vec<&Operand> {
        match self {
            Instr::Compute { src1, src2, .. } => {
                let mut v: Vec<&Operand> = vec![src1];
                v.extend(src2.iter());
                v.retain(|o| o.is_reg());
                v
            }
            Instr::Dma { src, .. } | Instr::Router { src, .. } => {
                if src.is_reg() {
                    vec![src]
                } else {
                    vec![]
                }
            }
        }
    }

    /// The `conv1d` input register, which lives in the flags.
    pub fn flag_input(&self) -> Option<VReg> {
        match self {
            Instr::Compute { flags, .. } => flags.x,
            _ => None,
        }
    }

    pub fn dst(&self) -> &Operand {
        match self {
            Instr::Compute { dst, .. } | Instr::Dma { dst, .. } | Instr::Router { dst, .. } => dst,
        }
    }
}

/// Controller configuration a program was generated for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ProgramMeta {
    pub core_id: usize,
    pub n_cores: usize,
    pub n_layer: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl Default for ProgramMeta {
    fn default() -> Self {
        ProgramMeta { core_id: 0, n_cores: 1, n_layer: 0, n_in: 0, n_out: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Program {
    pub meta: ProgramMeta,
    pub instrs: Vec<Instr>,
    /// `(first instruction index, name)`; a section runs until the next one.
    pub sections: Vec<(usize, String)>,
}

impl Program {
    pub fn new(meta: ProgramMeta) -> Self {
        Program { meta, ..Default::default() }
    }

    pub fn push(&mut self, i: Instr) {
        self.instrs.push(i);
    }

    /// Starts a new section at the next instruction, replacing an empty one.
    pub fn section(&mut self, name: &str) {
        let at = self.instrs.len();
        if let Some(last) = self.sections.last_mut() {
            if last.0 == at {
                last.1 = name.to_string();
                return;
            }
            if last.1 == name {
                return;
            }
        }
        self.sections.push((at, name.to_string()));
    }

    /// Section name of every instruction; `None` before the first section.
    pub fn section_of(&self) -> Vec<Option<&str>> {
        let mut out = vec![None; self.instrs.len()];
        for (k, (start, name)) in self.sections.iter().enumerate() {
            let end = self.sections.get(k + 1).map_or(self.instrs.len(), |s| s.0);
            for slot in out.iter_mut().take(end).skip(*start) {
                *slot = Some(name.as_str());
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn count(&self, mnemonic: &str) -> usize {
        self.instrs.iter().filter(|i| i.mnemonic() == mnemonic).count()
    }
}

impl fmt::Display for VReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slice {
            Some((a, b)) => write!(f, "v{}[{a}:{b}]", self.idx),
            None => write!(f, "v{}", self.idx),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Hbm(t) => write!(f, "hbm:{t}"),
            Operand::Ddr(t) => write!(f, "ddr:{t}"),
            Operand::V(v) => v.fmt(f),
            Operand::S(i) => write!(f, "s{i}"),
            Operand::Peer => f.write_str("peer"),
            Operand::Mfu => f.write_str("mfu"),
        }
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instr::Compute { op, dst, src1, src2, flags } => {
                write!(f, "{} {dst}, {src1}", op.mnemonic())?;
                if let Some(s) = src2 {
                    write!(f, ", {s}")?;
                }
                if let Some(x) = flags.x {
                    write!(f, " x={x}")?;
                }
                if let Some(t) = flags.tok {
                    write!(f, " tok={t}")?;
                }
                if flags.argmax {
                    f.write_str(" argmax")?;
                }
                Ok(())
            }
            Instr::Dma { op, src, dst, xfer_size } => write!(f, "{} {src} -> {dst}, {xfer_size}", op.mnemonic()),
            Instr::Router { op, src, dst, xfer_size } => write!(f, "{} {src} -> {dst}, {xfer_size}", op.mnemonic()),
        }
    }
}

impl fmt::Display for ProgramMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            ".meta core={} n_cores={} n_layer={} n_in={} n_out={}",
            self.core_id, self.n_cores, self.n_layer, self.n_in, self.n_out
        )
    }
}

/// Canonical assembly text.
pub fn format(p: &Program) -> String {
    let mut out = String::new();
    if p.meta != ProgramMeta::default() {
        out.push_str(&p.meta.to_string());
        out.push('\n');
    }
    let mut sec = p.sections.iter().peekable();
    for (i, ins) in p.instrs.iter().enumerate() {
        while let Some((_, name)) = sec.next_if(|s| s.0 == i) {
            out.push_str(".section ");
            out.push_str(name);
            out.push('\n');
        }
        out.push_str(&ins.to_string());
        out.push('\n');
    }
    for (_, name) in sec {
        out.push_str(".section ");
        out.push_str(name);
        out.push('\n');
    }
    out
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format(self))
    }
}
