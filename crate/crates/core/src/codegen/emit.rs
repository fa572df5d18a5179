//! Instruction emitters for one token pass: embedding, decoder layers, and
//! the LM head.
//!
//! Register convention (per core):
//!
//! | reg | use |
//! |-----|-----|
//! | v0 | residual stream |
//! | v1 | layernorm output |
//! | v2, v3, v4 | local V, K, Q |
//! | v5 / v6 | attention output, local / gathered |
//! | v7 / v8 | attention projection, local / gathered |
//! | v9 | second layernorm output |
//! | v10 / v11 | FFN1 after GELU, local / gathered |
//! | v12 / v13 | FFN2, local / gathered |
//! | v14, v15 | layernorm gamma, beta |
//! | v16, v17 | layernorm temporaries |
//! | v18 | position embedding |
//! | v19 | logits |
//! | v20..v23 | softmax rows, two sets alternating per head |
//! | s0, s1 | mean, variance |
//! | s2..s5 | softmax sum and max, two sets |
//! | s10, s11 | 1/emb, layernorm epsilon |

use super::ShardSpec;
use crate::error::{Error, Result};
use crate::isa::{ComputeOp::*, DmaOp, Flags, Instr, Operand, Program, ProgramMeta, RouterOp, VReg};
use crate::memory::{DdrTag, HbmTag};
use crate::model::GPTConfig;

pub const SEC_EMBEDDING: &str = "embedding";
pub const SEC_QKV: &str = "qkv";
pub const SEC_ATTENTION: &str = "attention";
pub const SEC_FFN: &str = "ffn";
pub const SEC_LN: &str = "layernorm_residual";
pub const SEC_SYNC: &str = "sync";
pub const SEC_LM_HEAD: &str = "lm_head";

const S_INV_EMB: usize = 10;
const S_EPS: usize = 11;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CodegenOptions {
    /// Write the residual stream to `ddr:act.tP.lL` after every layer.
    pub trace: bool,
}

fn v(i: usize) -> Operand {
    Operand::v(i)
}

fn s(i: usize) -> Operand {
    Operand::S(i)
}

fn c(p: &mut Program, op: crate::isa::ComputeOp, dst: Operand, a: Operand, b: Option<Operand>) {
    p.push(Instr::compute(op, dst, a, b));
}

fn read_ddr(p: &mut Program, tag: DdrTag, dst: Operand, n: usize) {
    p.push(Instr::dma(DmaOp::ReadDdr, Operand::Ddr(tag), dst, n));
}

fn read_weights(p: &mut Program, tag: HbmTag, n: usize) {
    p.push(Instr::dma(DmaOp::ReadWeights, Operand::Hbm(tag), Operand::Mfu, n));
}

fn layer_param(layer: usize, name: &str) -> DdrTag {
    DdrTag::LayerParam { layer, name: name.into() }
}

/// Loads the scalar constants used by every layernorm. Runs once per program.
pub fn emit_constants(p: &mut Program) {
    read_ddr(p, DdrTag::Const("inv_emb".into()), s(S_INV_EMB), 1);
    read_ddr(p, DdrTag::Const("eps".into()), s(S_EPS), 1);
}

/// `wte[token at slot pos] + wpe[pos]` into v0.
pub fn emit_embedding(p: &mut Program, cfg: &GPTConfig, pos: usize) {
    p.section(SEC_EMBEDDING);
    read_ddr(p, DdrTag::WteRow { slot: pos }, v(0), cfg.emb);
    read_ddr(p, DdrTag::WpeRow { pos }, v(18), cfg.emb);
    c(p, Add, v(0), v(0), Some(v(18)));
}

/// Layernorm as vector instructions; `x` and `out` are whole registers.
fn emit_layernorm(p: &mut Program, cfg: &GPTConfig, x: usize, out: usize, g: DdrTag, b: DdrTag) {
    p.section(SEC_LN);
    read_ddr(p, g, v(14), cfg.emb);
    read_ddr(p, b, v(15), cfg.emb);
    c(p, Accum, s(0), v(x), None);
    c(p, Mul, s(0), s(0), Some(s(S_INV_EMB)));
    c(p, Sub, v(16), v(x), Some(s(0)));
    c(p, Mul, v(17), v(16), Some(v(16)));
    c(p, Accum, s(1), v(17), None);
    c(p, Mul, s(1), s(1), Some(s(S_INV_EMB)));
    c(p, Add, s(1), s(1), Some(s(S_EPS)));
    c(p, RecipSqrt, s(1), s(1), None);
    c(p, Mul, v(16), v(16), Some(s(1)));
    c(p, Mul, v(16), v(16), Some(v(14)));
    c(p, Add, v(out), v(16), Some(v(15)));
}

/// Numerically stable softmax of `row` into `out`, given scratch scalars.
fn emit_softmax(p: &mut Program, row: usize, out: usize, sum: usize, max: usize) {
    c(p, ReduMax, s(max), v(row), None);
    c(p, Sub, v(row), v(row), Some(s(max)));
    c(p, Exp, v(row), v(row), None);
    c(p, Accum, s(sum), v(row), None);
    c(p, Recip, s(sum), s(sum), None);
    c(p, Mul, v(out), v(row), Some(s(sum)));
}

fn emit_conv(
    p: &mut Program,
    cfg: &GPTConfig,
    shard: &ShardSpec,
    layer: usize,
    w: &str,
    b: &str,
    x: usize,
    dst: usize,
) {
    let rows = if w == "wf2" { cfg.ffn_dim() } else { cfg.emb };
    let cols = shard.cols(w).expect("sharded matrix").len();
    let tag = HbmTag::Weight { layer, name: w.into() };
    read_weights(p, tag.clone(), rows * cols);
    p.push(
        Instr::compute(Conv1D, v(dst), Operand::Hbm(tag), Some(Operand::Ddr(layer_param(layer, b))))
            .with_flags(Flags { x: Some(VReg::whole(x)), ..Default::default() }),
    );
}

/// All-gather of `local` into `gathered`. Returns the register holding the
/// full vector: `local` itself on a single core.
fn emit_sync(p: &mut Program, shard: &ShardSpec, local: usize, gathered: usize, n_local: usize) -> usize {
    if shard.n_cores == 1 {
        return local;
    }
    let prev = p.sections.last().map(|s| s.1.clone());
    p.section(SEC_SYNC);
    p.push(Instr::router(RouterOp::Send, v(local), Operand::Peer, n_local));
    p.push(Instr::router(RouterOp::Recv, Operand::Peer, v(gathered), n_local * shard.n_cores));
    if let Some(prev) = prev {
        p.section(&prev);
    }
    gathered
}

/// One decoder layer for the token at `pos`; the residual stream is in v0.
pub fn emit_decoder_layer(
    p: &mut Program,
    cfg: &GPTConfig,
    shard: &ShardSpec,
    layer: usize,
    pos: usize,
    opts: &CodegenOptions,
) -> Result<()> {
    if layer >= cfg.n_layer {
        return Err(Error::Shard(format!("layer {layer} >= n_layer {}", cfg.n_layer)));
    }
    if shard.n_cores == 0 || shard.core_id >= shard.n_cores || shard.head_range.end > cfg.n_head {
        return Err(Error::Shard(format!("core {} of {} does not fit the model", shard.core_id, shard.n_cores)));
    }
    let dh = cfg.d_head;
    let heads = shard.head_range.clone();
    let t = pos + 1;

    emit_layernorm(p, cfg, 0, 1, layer_param(layer, "ln1_g"), layer_param(layer, "ln1_b"));

    // Value first, so its transposed write overlaps Key and Query.
    p.section(SEC_QKV);
    emit_conv(p, cfg, shard, layer, "wv", "bv", 1, 2);
    for (i, h) in heads.clone().enumerate() {
        let tag = HbmTag::ValueT { layer, head: h };
        p.push(Instr::dma(DmaOp::WriteKv, Operand::vs(2, i * dh, (i + 1) * dh), Operand::Hbm(tag), dh));
    }
    emit_conv(p, cfg, shard, layer, "wk", "bk", 1, 3);
    for (i, h) in heads.clone().enumerate() {
        let tag = HbmTag::KeyT { layer, head: h };
        p.push(Instr::dma(DmaOp::WriteKv, Operand::vs(3, i * dh, (i + 1) * dh), Operand::Hbm(tag), dh));
    }
    emit_conv(p, cfg, shard, layer, "wq", "bq", 1, 4);

    p.section(SEC_ATTENTION);
    for (i, h) in heads.clone().enumerate() {
        let (row, prob, sum, max) = if i % 2 == 0 { (21, 20, 2, 3) } else { (23, 22, 4, 5) };
        let kt = HbmTag::KeyT { layer, head: h };
        read_weights(p, kt.clone(), dh * t);
        p.push(
            Instr::compute(MaskedMM, v(row), Operand::Hbm(kt), Some(Operand::vs(4, i * dh, (i + 1) * dh)))
                .with_flags(Flags { tok: Some(pos), ..Default::default() }),
        );
        emit_softmax(p, row, prob, sum, max);
        let vt = HbmTag::ValueT { layer, head: h };
        read_weights(p, vt.clone(), t * dh);
        c(p, MM, Operand::vs(5, i * dh, (i + 1) * dh), Operand::Hbm(vt), Some(v(prob)));
    }
    let attn = emit_sync(p, shard, 5, 6, heads.len() * dh);
    emit_conv(p, cfg, shard, layer, "wa", "ba", attn, 7);
    let proj = emit_sync(p, shard, 7, 8, shard.attn_cols.len());

    p.section(SEC_LN);
    c(p, Add, v(0), v(0), Some(v(proj)));
    emit_layernorm(p, cfg, 0, 9, layer_param(layer, "ln2_g"), layer_param(layer, "ln2_b"));

    p.section(SEC_FFN);
    emit_conv(p, cfg, shard, layer, "wf1", "bf1", 9, 10);
    c(p, Gelu, v(10), v(10), None);
    let h1 = emit_sync(p, shard, 10, 11, shard.ffn1_cols.len());
    emit_conv(p, cfg, shard, layer, "wf2", "bf2", h1, 12);
    let h2 = emit_sync(p, shard, 12, 13, shard.ffn2_cols.len());

    p.section(SEC_LN);
    c(p, Add, v(0), v(0), Some(v(h2)));
    if opts.trace {
        p.push(Instr::dma(DmaOp::WriteDdr, v(0), Operand::Ddr(DdrTag::Act { pos, layer }), cfg.emb));
    }
    Ok(())
}

/// Final layernorm, logits against WTE transposed, softmax, and the greedy
/// token written to slot `pos + 1`.
pub fn emit_lm_head(p: &mut Program, cfg: &GPTConfig, pos: usize) {
    emit_layernorm(p, cfg, 0, 1, DdrTag::Final("lnf_g".into()), DdrTag::Final("lnf_b".into()));
    p.section(SEC_LM_HEAD);
    read_weights(p, HbmTag::WteT, cfg.emb * cfg.vocab);
    c(p, MM, v(19), Operand::Hbm(HbmTag::WteT), Some(v(1)));
    // Probabilities are kept for fidelity; the token is the argmax of the
    // logits, which softmax preserves.
    c(p, Load, v(21), v(19), None);
    emit_softmax(p, 21, 20, 2, 3);
    p.push(
        Instr::compute(ReduMax, Operand::Ddr(DdrTag::Tok { slot: pos + 1 }), v(19), None)
            .with_flags(Flags { argmax: true, ..Default::default() }),
    );
}

/// Checks the sequence bounds of a run.
pub fn check_lengths(cfg: &GPTConfig, n_in: usize, n_out: usize) -> Result<()> {
    if n_in == 0 || n_out == 0 {
        return Err(Error::Config(format!("need at least one input and one output token, got {n_in} and {n_out}")));
    }
    if n_in + n_out > cfg.max_seq {
        return Err(Error::SeqOverflow { len: n_in + n_out, max_seq: cfg.max_seq });
    }
    Ok(())
}

/// Number of token passes in a run: every input token, then every output
/// token except the last, which is never fed back.
pub fn n_passes(n_in: usize, n_out: usize) -> usize {
    n_in + n_out - 1
}

/// Everything one core runs for the token at `pos`. The LM head is emitted
/// from the last input token on.
pub fn emit_pass(p: &mut Program, cfg: &GPTConfig, shard: &ShardSpec, pos: usize, opts: &CodegenOptions) -> Result<()> {
    let n_in = p.meta.n_in;
    if pos == 0 {
        emit_constants(p);
    }
    emit_embedding(p, cfg, pos);
    for layer in 0..cfg.n_layer {
        emit_decoder_layer(p, cfg, shard, layer, pos, opts)?;
    }
    if pos + 1 >= n_in {
        emit_lm_head(p, cfg, pos);
    }
    Ok(())
}

fn meta(cfg: &GPTConfig, shard: &ShardSpec, n_in: usize, n_out: usize) -> ProgramMeta {
    ProgramMeta { core_id: shard.core_id, n_cores: shard.n_cores, n_layer: cfg.n_layer, n_in, n_out }
}

/// The program for a single pass, for drivers that feed a core pass by pass.
pub fn pass_program(
    cfg: &GPTConfig,
    shard: &ShardSpec,
    n_in: usize,
    n_out: usize,
    pos: usize,
    opts: &CodegenOptions,
) -> Result<Program> {
    check_lengths(cfg, n_in, n_out)?;
    if pos >= n_passes(n_in, n_out) {
        return Err(Error::Config(format!("pass {pos} beyond the {} passes of this run", n_passes(n_in, n_out))));
    }
    let mut p = Program::new(meta(cfg, shard, n_in, n_out));
    emit_pass(&mut p, cfg, shard, pos, opts)?;
    Ok(p)
}

/// Summarization over the `n_in` input tokens, then `n_out - 1` generation
/// passes, as one program.
pub fn emit_full_program(
    cfg: &GPTConfig,
    shard: &ShardSpec,
    n_in: usize,
    n_out: usize,
    opts: &CodegenOptions,
) -> Result<Program> {
    check_lengths(cfg, n_in, n_out)?;
    let mut p = Program::new(meta(cfg, shard, n_in, n_out));
    for pos in 0..n_passes(n_in, n_out) {
        emit_pass(&mut p, cfg, shard, pos, opts)?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{format, parse_asm, validate, Instr};

    fn tiny4_program(n_cores: usize, n_in: usize, n_out: usize) -> Program {
        let cfg = GPTConfig::TINY4;
        let shard = ShardSpec::new(&cfg, 0, n_cores).unwrap();
        emit_full_program(&cfg, &shard, n_in, n_out, &CodegenOptions::default()).unwrap()
    }

    #[test]
    fn four_syncs_per_layer_per_pass() {
        for n_cores in [2, 4] {
            let p = tiny4_program(n_cores, 3, 2);
            let passes = n_passes(3, 2);
            assert_eq!(p.count("router.send"), 4 * 2 * passes);
            assert_eq!(p.count("router.recv"), 4 * 2 * passes);
        }
        let p = tiny4_program(1, 3, 2);
        assert_eq!(p.count("router.send") + p.count("router.recv"), 0);
    }

    #[test]
    fn value_conv_comes_first() {
        let p = tiny4_program(2, 1, 1);
        let first = p
            .instrs
            .iter()
            .find_map(|i| match i {
                Instr::Compute { op: Conv1D, src1: Operand::Hbm(HbmTag::Weight { name, .. }), .. } => {
                    Some(name.clone())
                }
                _ => None,
            })
            .unwrap();
        assert_eq!(first, "wv");
    }

    #[test]
    fn pass_and_lm_head_counts() {
        let cfg = GPTConfig::TINY4;
        let p = tiny4_program(1, 4, 3);
        // Each layer has one Q conv.
        let q_convs = p
            .instrs
            .iter()
            .filter(
                |i| matches!(i, Instr::Compute { src1: Operand::Hbm(HbmTag::Weight { name, .. }), .. } if name == "wq"),
            )
            .count();
        assert_eq!(q_convs, cfg.n_layer * n_passes(4, 3));
        // One MM per head per layer per pass, plus one per LM head call.
        assert_eq!(p.count("mm"), cfg.n_layer * cfg.n_head * 6 + 3);
        let p = tiny4_program(1, 1, 1);
        let matrix_ops = p.count("maskedmm") + p.count("mm") + p.count("conv1d");
        assert_eq!(p.count("dma.read_weights"), matrix_ops);
        // Softmax max per head, then the LM head's softmax max and argmax.
        assert_eq!(p.count("redu_max"), p.count("maskedmm") + 2);
    }

    #[test]
    fn emitted_programs_validate() {
        for n_cores in [1, 2, 4] {
            let p = tiny4_program(n_cores, 4, 3);
            assert_eq!(validate(&p, &GPTConfig::TINY4), vec![], "n_cores={n_cores}");
        }
        let cfg = GPTConfig::TINY;
        let shard = ShardSpec::new(&cfg, 1, 2).unwrap();
        let p = emit_full_program(&cfg, &shard, 2, 2, &CodegenOptions { trace: true }).unwrap();
        assert_eq!(validate(&p, &cfg), vec![]);
    }

    #[test]
    fn gpt2_medium_layer_round_trips() {
        let cfg = GPTConfig::GPT2_345M;
        let shard = ShardSpec::new(&cfg, 0, 4).unwrap();
        let mut p = Program::new(meta(&cfg, &shard, 1, 1));
        emit_constants(&mut p);
        emit_embedding(&mut p, &cfg, 0);
        emit_decoder_layer(&mut p, &cfg, &shard, 0, 0, &CodegenOptions::default()).unwrap();
        assert_eq!(parse_asm(&format(&p)).unwrap(), p);
    }

    #[test]
    fn length_and_layer_errors() {
        let cfg = GPTConfig::TINY;
        let shard = ShardSpec::single(&cfg);
        let o = CodegenOptions::default();
        assert!(emit_full_program(&cfg, &shard, 0, 1, &o).is_err());
        assert!(emit_full_program(&cfg, &shard, 1000, 25, &o).is_err());
        assert!(pass_program(&cfg, &shard, 2, 1, 2, &o).is_err());
        let mut p = Program::default();
        assert!(emit_decoder_layer(&mut p, &cfg, &shard, 2, 0, &o).is_err());
    }
}
