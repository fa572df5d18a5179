//! Symbolic execution over operand lengths. Used by `validate` and by the
//! engine's timing-only mode, which never materializes data.

use std::collections::{HashMap, VecDeque};

use super::instr::*;
use crate::memory::{DdrTag, HbmTag, SymbolTable};

/// Sizes an instruction operates on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InstrShape {
    /// Matrix rows (input length) for matrix ops and weight streams.
    pub rows: usize,
    /// Matrix columns (output length) for matrix ops and weight streams.
    pub cols: usize,
    /// Elements processed or transferred.
    pub n: usize,
}

#[derive(Clone, Debug)]
pub struct ShapeState {
    syms: SymbolTable,
    n_cores: usize,
    vlen: Vec<Option<usize>>,
    sdef: Vec<bool>,
    /// Rows written per `(is_value, layer, head)`.
    kv: HashMap<(bool, usize, usize), usize>,
    streams: VecDeque<(HbmTag, usize, usize)>,
    tokens: Vec<bool>,
    scratch: HashMap<DdrTag, usize>,
    pending_send: Option<usize>,
}

type R<T> = Result<T, String>;

/// Operand is a scalar register, or a vector of some length.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Val {
    Scalar,
    Vector(usize),
}

impl Val {
    fn len(self) -> usize {
        match self {
            Val::Scalar => 1,
            Val::Vector(n) => n,
        }
    }
}

impl ShapeState {
    /// Host-written token slots are `0..n_in`.
    pub fn new(syms: SymbolTable, n_cores: usize, n_in: usize) -> Self {
        let max_seq = syms.cfg.max_seq;
        let mut tokens = vec![false; max_seq];
        for t in tokens.iter_mut().take(n_in) {
            *t = true;
        }
        ShapeState {
            syms,
            n_cores,
            vlen: vec![None; N_VREGS],
            sdef: vec![false; N_SREGS],
            kv: HashMap::new(),
            streams: VecDeque::new(),
            tokens,
            scratch: HashMap::new(),
            pending_send: None,
        }
    }

    pub fn kv_rows(&self, value: bool, layer: usize, head: usize) -> usize {
        self.kv.get(&(value, layer, head)).copied().unwrap_or(0)
    }

    pub fn vlen(&self, idx: usize) -> Option<usize> {
        self.vlen.get(idx).copied().flatten()
    }

    fn vreg_idx(&self, v: &VReg) -> R<usize> {
        if v.idx >= N_VREGS {
            return Err(format!("register index v{} out of range (file has {N_VREGS})", v.idx));
        }
        Ok(v.idx)
    }

    fn read_v(&self, v: &VReg) -> R<usize> {
        let len = self.vlen[self.vreg_idx(v)?].ok_or_else(|| format!("v{} read before it was written", v.idx))?;
        match v.slice {
            None => Ok(len),
            Some((a, b)) if a < b && b <= len => Ok(b - a),
            Some((a, b)) => Err(format!("slice {v} out of range for length {len} (start {a}, end {b})")),
        }
    }

    fn read(&self, o: &Operand) -> R<Val> {
        match o {
            Operand::V(v) => self.read_v(v).map(Val::Vector),
            Operand::S(i) if *i >= N_SREGS => Err(format!("register index s{i} out of range (file has {N_SREGS})")),
            Operand::S(i) if !self.sdef[*i] => Err(format!("s{i} read before it was written")),
            Operand::S(_) => Ok(Val::Scalar),
            other => Err(format!("{other} is not a register")),
        }
    }

    fn write_v(&mut self, v: &VReg, len: usize) -> R<()> {
        let i = self.vreg_idx(v)?;
        match v.slice {
            None => self.vlen[i] = Some(len),
            Some((a, b)) => {
                let cur = self.vlen[i].unwrap_or(0);
                if b <= a || b - a != len {
                    return Err(format!("slice {v} does not hold {len} elements"));
                }
                if a > cur {
                    return Err(format!("slice {v} leaves a gap past current length {cur}"));
                }
                self.vlen[i] = Some(cur.max(b));
            }
        }
        Ok(())
    }

    fn write(&mut self, o: &Operand, val: Val) -> R<()> {
        match (o, val) {
            (Operand::V(v), _) => self.write_v(v, val.len()),
            (Operand::S(i), Val::Scalar) if *i < N_SREGS => {
                self.sdef[*i] = true;
                Ok(())
            }
            (Operand::S(i), _) if *i >= N_SREGS => {
                Err(format!("register index s{i} out of range (file has {N_SREGS})"))
            }
            (Operand::S(i), Val::Vector(n)) => Err(format!("s{i} cannot hold a {n}-element vector")),
            (other, _) => Err(format!("{other} is not a register")),
        }
    }

    fn kv_slot(&self, tag: &HbmTag) -> R<(bool, usize, usize)> {
        self.syms.hbm_shape(tag).map_err(|e| e.to_string())?;
        match tag {
            HbmTag::KeyT { layer, head } => Ok((false, *layer, *head)),
            HbmTag::ValueT { layer, head } => Ok((true, *layer, *head)),
            other => Err(format!("{other} is not a KV-cache symbol")),
        }
    }

    /// Shape of a streamable HBM matrix as the MFU sees it (input x output).
    fn matrix_shape(&self, tag: &HbmTag) -> R<(usize, usize)> {
        let d_head = self.syms.cfg.d_head;
        match tag {
            HbmTag::KeyT { .. } | HbmTag::ValueT { .. } => {
                let slot = self.kv_slot(tag)?;
                let t = self.kv_rows(slot.0, slot.1, slot.2);
                if t == 0 {
                    return Err(format!("{tag} read while empty"));
                }
                Ok(if slot.0 { (t, d_head) } else { (d_head, t) })
            }
            _ => self.syms.hbm_shape(tag).map_err(|e| e.to_string()),
        }
    }

    fn take_stream(&mut self, tag: &HbmTag) -> R<(usize, usize)> {
        match self.streams.pop_front() {
            Some((t, r, c)) if t == *tag => Ok((r, c)),
            Some((t, _, _)) => Err(format!("matrix op reads {tag} but the next weight stream is {t}")),
            None => Err(format!("matrix op on {tag} without a preceding dma.read_weights")),
        }
    }

    fn ddr_len(&self, tag: &DdrTag) -> R<Option<usize>> {
        self.syms.ddr_len(tag).map_err(|e| e.to_string())
    }

    fn token_slot(&self, slot: usize) -> R<()> {
        if self.tokens.get(slot).copied().unwrap_or(false) {
            Ok(())
        } else {
            Err(format!("token slot {slot} read before it was written"))
        }
    }

    pub fn step(&mut self, ins: &Instr) -> R<InstrShape> {
        use ComputeOp::*;
        match ins {
            Instr::Compute { op, dst, src1, src2, flags } => match op {
                Conv1D => {
                    let HbmTag::Weight { .. } = unwrap_hbm(src1)? else {
                        return Err(format!("conv1d weights must be a layer weight matrix, got {src1}"));
                    };
                    let x = flags.x.ok_or("conv1d needs an input vector (x=)")?;
                    let (rows, cols) = self.take_stream(unwrap_hbm(src1)?)?;
                    let xl = self.read_v(&x)?;
                    if xl != rows {
                        return Err(format!("conv1d input has {xl} elements, matrix has {rows} rows"));
                    }
                    let Some(Operand::Ddr(b)) = src2 else { unreachable!("checked at parse") };
                    if !matches!(b, DdrTag::LayerParam { .. }) {
                        return Err(format!("conv1d bias must be a layer parameter, got {b}"));
                    }
                    let bl = self.ddr_len(b)?.unwrap_or(0);
                    if bl != cols {
                        return Err(format!("conv1d bias has {bl} elements, matrix has {cols} columns"));
                    }
                    self.write(dst, Val::Vector(cols))?;
                    Ok(InstrShape { rows, cols, n: cols })
                }
                MaskedMM => {
                    let tag = unwrap_hbm(src1)?;
                    if !matches!(tag, HbmTag::KeyT { .. }) {
                        return Err(format!("maskedmm needs a key cache, got {tag}"));
                    }
                    let tok = flags.tok.ok_or("maskedmm needs a query position (tok=)")?;
                    let (rows, cols) = self.take_stream(tag)?;
                    let ql = self.read(src2.as_ref().expect("binary"))?.len();
                    if ql != rows {
                        return Err(format!("maskedmm query has {ql} elements, expected {rows}"));
                    }
                    if tok >= cols {
                        return Err(format!("maskedmm tok={tok} beyond {cols} cached rows"));
                    }
                    self.write(dst, Val::Vector(cols))?;
                    Ok(InstrShape { rows, cols, n: cols })
                }
                MM => {
                    let tag = unwrap_hbm(src1)?;
                    if !matches!(tag, HbmTag::ValueT { .. } | HbmTag::WteT) {
                        return Err(format!("mm needs a value cache or wte_t, got {tag}"));
                    }
                    let (rows, cols) = self.take_stream(tag)?;
                    let xl = self.read(src2.as_ref().expect("binary"))?.len();
                    if xl != rows {
                        return Err(format!("mm input has {xl} elements, matrix has {rows} rows"));
                    }
                    self.write(dst, Val::Vector(cols))?;
                    Ok(InstrShape { rows, cols, n: cols })
                }
                Add | Sub | Mul => {
                    let a = self.read(src1)?;
                    let b = self.read(src2.as_ref().expect("binary"))?;
                    let out = match (a, b) {
                        (Val::Vector(x), Val::Vector(y)) if x != y => {
                            return Err(format!("{}: lengths {x} and {y} differ", op.mnemonic()))
                        }
                        (Val::Vector(x), _) | (_, Val::Vector(x)) => Val::Vector(x),
                        _ => Val::Scalar,
                    };
                    self.write(dst, out)?;
                    Ok(InstrShape { n: out.len(), ..Default::default() })
                }
                RecipSqrt | Recip | Exp | Load | Store | Gelu => {
                    let a = self.read(src1)?;
                    self.write(dst, a)?;
                    Ok(InstrShape { n: a.len(), ..Default::default() })
                }
                Accum => {
                    let n = self.read(src1)?.len();
                    self.write(dst, Val::Scalar)?;
                    Ok(InstrShape { n, ..Default::default() })
                }
                ReduMax => {
                    let n = self.read(src1)?.len();
                    if flags.argmax {
                        let Operand::Ddr(DdrTag::Tok { slot }) = dst else {
                            return Err(format!("argmax must write a token slot, got {dst}"));
                        };
                        self.ddr_len(&DdrTag::Tok { slot: *slot })?;
                        self.tokens[*slot] = true;
                    } else {
                        self.write(dst, Val::Scalar)?;
                    }
                    Ok(InstrShape { n, ..Default::default() })
                }
            },
            Instr::Dma { op, src, dst, xfer_size } => {
                let n = *xfer_size;
                match op {
                    DmaOp::ReadWeights => {
                        let tag = unwrap_hbm(src)?;
                        let (rows, cols) = self.matrix_shape(tag)?;
                        if rows * cols != n {
                            return Err(format!("read_weights {tag}: xfer_size {n} != {rows}x{cols}"));
                        }
                        self.streams.push_back((tag.clone(), rows, cols));
                        Ok(InstrShape { rows, cols, n })
                    }
                    DmaOp::ReadDdr => {
                        let Operand::Ddr(tag) = src else { unreachable!("checked at parse") };
                        let len = match tag {
                            DdrTag::Tok { .. } => return Err(format!("{tag} holds a token id, not data")),
                            DdrTag::WteRow { slot } => {
                                self.token_slot(*slot)?;
                                self.ddr_len(tag)?
                            }
                            _ => self.ddr_len(tag)?,
                        };
                        let len = match len {
                            Some(l) => l,
                            None => {
                                *self.scratch.get(tag).ok_or_else(|| format!("{tag} read before it was written"))?
                            }
                        };
                        if len != n {
                            return Err(format!("read_ddr {tag}: xfer_size {n} != length {len}"));
                        }
                        let val = if matches!(dst, Operand::S(_)) { Val::Scalar } else { Val::Vector(n) };
                        if val == Val::Scalar && n != 1 {
                            return Err(format!("read_ddr {tag}: {n} elements into a scalar register"));
                        }
                        self.write(dst, val)?;
                        Ok(InstrShape { n, ..Default::default() })
                    }
                    DmaOp::WriteKv => {
                        let tag = unwrap_hbm(dst)?;
                        let slot = self.kv_slot(tag)?;
                        let d_head = self.syms.cfg.d_head;
                        let len = self.read(src)?.len();
                        if len != d_head || n != d_head {
                            return Err(format!("write_kv {tag}: row of {len} (xfer {n}) != d_head {d_head}"));
                        }
                        let rows = self.kv.entry(slot).or_insert(0);
                        if *rows >= self.syms.cfg.max_seq {
                            return Err(format!("write_kv {tag}: cache full at {} rows", *rows));
                        }
                        *rows += 1;
                        Ok(InstrShape { n, ..Default::default() })
                    }
                    DmaOp::WriteDdr => {
                        let Operand::Ddr(tag) = dst else { unreachable!("checked at parse") };
                        let len = self.read(src)?.len();
                        if len != n {
                            return Err(format!("write_ddr {tag}: source has {len} elements, xfer_size {n}"));
                        }
                        match (tag, self.ddr_len(tag)?) {
                            (DdrTag::Act { .. }, Some(want)) if want != n => {
                                return Err(format!("write_ddr {tag}: expects {want} elements"))
                            }
                            (DdrTag::Act { .. } | DdrTag::Scratch(_), _) => {}
                            _ => return Err(format!("write_ddr {tag}: read-only symbol")),
                        }
                        self.scratch.insert(tag.clone(), n);
                        Ok(InstrShape { n, ..Default::default() })
                    }
                }
            }
            Instr::Router { op, src, dst, xfer_size } => {
                if self.n_cores <= 1 {
                    return Err(format!("{}: no peer exists with a single core", op.mnemonic()));
                }
                let n = *xfer_size;
                match op {
                    RouterOp::Send => {
                        let len = self.read(src)?.len();
                        if len != n {
                            return Err(format!("router.send: source has {len} elements, xfer_size {n}"));
                        }
                        if self.pending_send.replace(n).is_some() {
                            return Err("router.send while a previous send has no matching recv".into());
                        }
                    }
                    RouterOp::Recv => {
                        let sent = self.pending_send.take().ok_or("router.recv without a preceding send")?;
                        if sent * self.n_cores != n {
                            return Err(format!(
                                "router.recv of {n} elements, but {} cores x {sent} were sent",
                                self.n_cores
                            ));
                        }
                        self.write(dst, Val::Vector(n))?;
                    }
                }
                Ok(InstrShape { n, ..Default::default() })
            }
        }
    }
}

fn unwrap_hbm(o: &Operand) -> R<&HbmTag> {
    match o {
        Operand::Hbm(t) => Ok(t),
        other => Err(format!("{other} is not an HBM symbol")),
    }
}
