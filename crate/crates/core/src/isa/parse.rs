use super::instr::*;
use crate::error::{Error, Result};

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_index(s: &str) -> Option<usize> {
    if s.is_empty() || (s.len() > 1 && s.starts_with('0')) || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_vreg(s: &str) -> Option<VReg> {
    let body = s.strip_prefix('v')?;
    match body.split_once('[') {
        None => Some(VReg::whole(parse_index(body)?)),
        Some((idx, rest)) => {
            let (a, b) = rest.strip_suffix(']')?.split_once(':')?;
            Some(VReg::slice(parse_index(idx)?, parse_index(a)?, parse_index(b)?))
        }
    }
}

pub fn parse_operand(s: &str) -> Result<Operand> {
    let bad = || Error::Operand(format!("malformed operand {s:?}"));
    if let Some(t) = s.strip_prefix("hbm:") {
        return Ok(Operand::Hbm(crate::memory::HbmTag::parse_lenient(t)?));
    }
    if let Some(t) = s.strip_prefix("ddr:") {
        return Ok(Operand::Ddr(crate::memory::DdrTag::parse_lenient(t)?));
    }
    match s {
        "peer" => return Ok(Operand::Peer),
        "mfu" => return Ok(Operand::Mfu),
        _ => {}
    }
    if s.starts_with('v') {
        return parse_vreg(s).map(Operand::V).ok_or_else(bad);
    }
    if let Some(i) = s.strip_prefix('s') {
        return parse_index(i).map(Operand::S).ok_or_else(bad);
    }
    Err(bad())
}

fn compute_op(m: &str) -> Option<ComputeOp> {
    ComputeOp::ALL.into_iter().find(|op| op.mnemonic() == m)
}

fn is_v(o: &Operand) -> bool {
    matches!(o, Operand::V(_))
}

fn is_vs(o: &Operand) -> bool {
    o.is_reg()
}

/// Operand-location rules per op. Tag kinds and required flags are checked
/// by `validate`.
pub(crate) fn check_compute(
    op: ComputeOp,
    dst: &Operand,
    src1: &Operand,
    src2: Option<&Operand>,
    flags: &Flags,
) -> std::result::Result<(), String> {
    use ComputeOp::*;
    let want = |ok: bool, what: &str| if ok { Ok(()) } else { Err(format!("{}: {what}", op.mnemonic())) };
    want(src2.is_some() == op.is_binary(), if op.is_binary() { "needs two sources" } else { "takes one source" })?;
    want(flags.x.is_none() || op == Conv1D, "x= only applies to conv1d")?;
    want(flags.tok.is_none() || op == MaskedMM, "tok= only applies to maskedmm")?;
    want(!flags.argmax || op == ReduMax, "argmax only applies to redu_max")?;
    let hbm = |o: &Operand| matches!(o, Operand::Hbm(_));
    match op {
        Conv1D => {
            want(is_v(dst), "destination must be a vector register")?;
            want(hbm(src1), "src1 must be in HBM")?;
            want(matches!(src2, Some(Operand::Ddr(_))), "src2 must be in DDR")
        }
        MaskedMM | MM => {
            want(is_v(dst), "destination must be a vector register")?;
            want(hbm(src1), "src1 must be in HBM")?;
            want(src2.is_some_and(is_v), "src2 must be a vector register")
        }
        Add | Sub | Mul => want(is_vs(dst) && is_vs(src1) && src2.is_some_and(is_vs), "operands must be registers"),
        Accum => want(matches!(dst, Operand::S(_)) && is_v(src1), "accum sD, vS"),
        Gelu => want(is_v(dst) && is_v(src1), "gelu vD, vS"),
        RecipSqrt | Recip | Exp | Load | Store => want(is_vs(dst) && is_vs(src1), "operands must be registers"),
        ReduMax => {
            want(is_v(src1), "source must be a vector register")?;
            if flags.argmax {
                want(matches!(dst, Operand::Ddr(_)), "argmax destination must be in DDR")
            } else {
                want(matches!(dst, Operand::S(_)), "max destination must be a scalar register")
            }
        }
    }
}

pub(crate) fn check_transfer(ins: &Instr) -> std::result::Result<(), String> {
    let (name, ok, size) = match ins {
        Instr::Dma { op, src, dst, xfer_size } => (
            op.mnemonic(),
            match op {
                DmaOp::ReadWeights => matches!(src, Operand::Hbm(_)) && *dst == Operand::Mfu,
                DmaOp::ReadDdr => matches!(src, Operand::Ddr(_)) && dst.is_reg(),
                DmaOp::WriteKv => is_v(src) && matches!(dst, Operand::Hbm(_)),
                DmaOp::WriteDdr => is_v(src) && matches!(dst, Operand::Ddr(_)),
            },
            *xfer_size,
        ),
        Instr::Router { op, src, dst, xfer_size } => (
            op.mnemonic(),
            match op {
                RouterOp::Send => is_v(src) && *dst == Operand::Peer,
                RouterOp::Recv => *src == Operand::Peer && is_v(dst),
            },
            *xfer_size,
        ),
        Instr::Compute { .. } => return Ok(()),
    };
    if !ok {
        return Err(format!("{name}: operand location invalid for this op"));
    }
    if size == 0 {
        return Err(format!("{name}: xfer_size must be positive"));
    }
    Ok(())
}

fn parse_meta(line: usize, rest: &str) -> Result<ProgramMeta> {
    let mut m = ProgramMeta::default();
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| err(line, format!("bad meta field {kv:?}")))?;
        let v = parse_index(v).ok_or_else(|| err(line, format!("bad meta value {kv:?}")))?;
        match k {
            "core" => m.core_id = v,
            "n_cores" => m.n_cores = v,
            "n_layer" => m.n_layer = v,
            "n_in" => m.n_in = v,
            "n_out" => m.n_out = v,
            _ => return Err(err(line, format!("unknown meta field {k:?}"))),
        }
    }
    Ok(m)
}

fn parse_line(line: usize, text: &str) -> Result<Instr> {
    let (mnemonic, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
    let rest = rest.trim();
    let wrap = |e: Error| match e {
        Error::Parse { .. } => e,
        other => err(line, other.to_string()),
    };
    let transfer = |rest: &str| -> Result<(Operand, Operand, usize)> {
        let (src, tail) = rest.split_once("->").ok_or_else(|| err(line, "expected `src -> dst, size`"))?;
        let (dst, size) = tail.split_once(',').ok_or_else(|| err(line, "expected `, size`"))?;
        let size = parse_index(size.trim()).ok_or_else(|| err(line, format!("bad transfer size {:?}", size.trim())))?;
        Ok((parse_operand(src.trim()).map_err(wrap)?, parse_operand(dst.trim()).map_err(wrap)?, size))
    };
    let ins = if let Some(op) = DmaOp::ALL.into_iter().find(|o| o.mnemonic() == mnemonic) {
        let (src, dst, xfer_size) = transfer(rest)?;
        Instr::Dma { op, src, dst, xfer_size }
    } else if let Some(op) = [RouterOp::Send, RouterOp::Recv].into_iter().find(|o| o.mnemonic() == mnemonic) {
        let (src, dst, xfer_size) = transfer(rest)?;
        Instr::Router { op, src, dst, xfer_size }
    } else if let Some(op) = compute_op(mnemonic) {
        // Operands are comma separated; flags follow the last operand after whitespace.
        let mut operands = Vec::new();
        let mut flags = Flags::default();
        let mut tokens = rest.split_whitespace();
        for tok in tokens.by_ref() {
            match tok.strip_suffix(',') {
                Some(o) => operands.push(o),
                None => {
                    operands.push(tok);
                    break;
                }
            }
        }
        for f in tokens {
            match f.split_once('=') {
                Some(("x", v)) if flags.x.is_none() => {
                    flags.x = Some(parse_vreg(v).ok_or_else(|| err(line, format!("bad flag {f:?}")))?)
                }
                Some(("tok", v)) if flags.tok.is_none() => {
                    flags.tok = Some(parse_index(v).ok_or_else(|| err(line, format!("bad flag {f:?}")))?)
                }
                None if f == "argmax" && !flags.argmax => flags.argmax = true,
                _ => return Err(err(line, format!("bad flag {f:?}"))),
            }
        }
        if !(2..=3).contains(&operands.len()) {
            return Err(err(line, format!("{mnemonic}: expected 2 or 3 operands")));
        }
        let dst = parse_operand(operands[0]).map_err(wrap)?;
        let src1 = parse_operand(operands[1]).map_err(wrap)?;
        let src2 = operands.get(2).map(|o| parse_operand(o)).transpose().map_err(wrap)?;
        check_compute(op, &dst, &src1, src2.as_ref(), &flags).map_err(|m| err(line, m))?;
        Instr::Compute { op, dst, src1, src2, flags }
    } else {
        return Err(err(line, format!("unknown mnemonic {mnemonic:?}")));
    };
    check_transfer(&ins).map_err(|m| err(line, m))?;
    Ok(ins)
}

/// Parses assembly text. `#` starts a comment; blank lines are ignored.
pub fn parse_asm(text: &str) -> Result<Program> {
    let mut p = Program::default();
    let mut seen_meta = false;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let s = raw.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        if let Some(rest) = s.strip_prefix(".meta") {
            if seen_meta || !p.instrs.is_empty() || !p.sections.is_empty() {
                return Err(err(line, ".meta must come first and only once"));
            }
            p.meta = parse_meta(line, rest)?;
            seen_meta = true;
        } else if let Some(rest) = s.strip_prefix(".section") {
            let name = rest.trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(err(line, "expected `.section <name>`"));
            }
            p.sections.push((p.instrs.len(), name.to_string()));
        } else {
            p.instrs.push(parse_line(line, s)?);
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{DdrTag, HbmTag};

    #[test]
    fn bare_symbols_parse() {
        let p = parse_asm("conv1d v2, hbm:w0, ddr:b0").unwrap();
        assert_eq!(
            p.instrs[0],
            Instr::compute(
                ComputeOp::Conv1D,
                Operand::v(2),
                Operand::Hbm(HbmTag::Symbol("w0".into())),
                Some(Operand::Ddr(DdrTag::Symbol("b0".into())))
            )
        );
    }

    #[test]
    fn conv1d_maps_fields() {
        let p = parse_asm("conv1d v2, hbm:l0.wv, ddr:l0.bv x=v1").unwrap();
        match &p.instrs[0] {
            Instr::Compute { op, dst, src1, src2, flags } => {
                assert_eq!(*op, ComputeOp::Conv1D);
                assert_eq!(*dst, Operand::v(2));
                assert_eq!(*src1, Operand::Hbm(HbmTag::Weight { layer: 0, name: "wv".into() }));
                assert_eq!(*src2, Some(Operand::Ddr(DdrTag::LayerParam { layer: 0, name: "bv".into() })));
                assert_eq!(flags.x, Some(VReg::whole(1)));
                assert_eq!(src1.loc(), Loc::OffChip);
                assert_eq!(dst.loc(), Loc::RegisterFile);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn router_send_size() {
        let p = parse_asm("router.send v5 -> peer, 384").unwrap();
        assert_eq!(p.instrs[0], Instr::router(RouterOp::Send, Operand::v(5), Operand::Peer, 384));
    }

    #[test]
    fn rejects_bad_lines() {
        let e = parse_asm("frobnicate v1").unwrap_err().to_string();
        assert!(e.contains("unknown mnemonic"), "{e}");
        assert!(parse_asm("add v1, v2, q7").is_err());
        assert!(parse_asm("add v1, v2").is_err());
        assert!(parse_asm("conv1d v2, ddr:l0.bv, ddr:l0.bv x=v1").is_err());
        assert!(parse_asm("exp v2, v3 x=v1").is_err());
        assert!(parse_asm("mm v1, hbm:a b, v2").is_err());
        assert!(parse_asm("dma.read_ddr ddr:l0.bq -> v1, 0").is_err());
        assert!(parse_asm("router.send peer -> v1, 3").is_err());
        assert!(parse_asm("redu_max s1, v2 argmax").is_err());
        assert!(parse_asm("exp v01, v2").is_err());
        assert!(parse_asm("exp v1, v2[3]").is_err());
    }

    #[test]
    fn comments_sections_and_meta() {
        let src = "# header\n.meta core=1 n_cores=2 n_layer=3 n_in=4 n_out=5\n.section qkv\nexp v1, v2  # trailing\n\n";
        let p = parse_asm(src).unwrap();
        assert_eq!(p.meta.core_id, 1);
        assert_eq!(p.meta.n_out, 5);
        assert_eq!(p.sections, vec![(0, "qkv".to_string())]);
        assert_eq!(format(&p), ".meta core=1 n_cores=2 n_layer=3 n_in=4 n_out=5\n.section qkv\nexp v1, v2\n");
    }

    #[test]
    fn empty_program_formats_empty() {
        assert_eq!(format(&Program::default()), "");
        assert_eq!(parse_asm("").unwrap(), Program::default());
    }

    #[test]
    fn one_line_per_compute_op() {
        let src = "\
conv1d v2, hbm:l0.wv, ddr:l0.bv x=v1
maskedmm v21, hbm:kt.l0.h0, v4[0:64] tok=3
mm v5[0:64], hbm:vt.l0.h0, v20
add v0, v0, v18
sub v16, v0, s0
mul v16, v16, s1
accum s0, v0
recip_sqrt s1, s1
recip s2, s2
exp v20, v20
load v17, v16[0:8]
store v5[8:16], v17
gelu v11, v10
redu_max s3, v21
";
        let p = parse_asm(src).unwrap();
        assert_eq!(p.len(), 14);
        let ops: std::collections::HashSet<_> = p.instrs.iter().map(|i| i.mnemonic()).collect();
        assert_eq!(ops.len(), 14);
        assert_eq!(format(&p), src);
    }
}
