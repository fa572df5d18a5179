use std::fmt;

use super::instr::Program;
use super::shape::ShapeState;
use crate::codegen::ShardSpec;
use crate::memory::SymbolTable;
use crate::model::GPTConfig;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    /// Offending instruction, if any.
    pub index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "instr {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Static checks: operand ranges, register-file capacity, peers, and
/// that every transfer size and shape agrees with `cfg` and the core's shard.
pub fn validate(p: &Program, cfg: &GPTConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let whole = |message: String| Diagnostic { index: None, message };
    if let Err(e) = cfg.validate() {
        return vec![whole(e.to_string())];
    }
    if p.meta.n_layer != cfg.n_layer {
        out.push(whole(format!("meta n_layer {} != config n_layer {}", p.meta.n_layer, cfg.n_layer)));
    }
    if p.meta.n_in + p.meta.n_out > cfg.max_seq + 1 {
        out.push(whole(format!("n_in + n_out = {} exceeds max_seq {}", p.meta.n_in + p.meta.n_out, cfg.max_seq)));
    }
    let shard = match ShardSpec::new(cfg, p.meta.core_id, p.meta.n_cores) {
        Ok(s) => s,
        Err(e) => {
            out.push(whole(e.to_string()));
            return out;
        }
    };
    let mut st = ShapeState::new(SymbolTable::new(*cfg, shard), p.meta.n_cores, p.meta.n_in);
    for (i, ins) in p.instrs.iter().enumerate() {
        if let Err(message) = st.step(ins) {
            out.push(Diagnostic { index: Some(i), message });
        }
    }
    let mut prev = 0;
    for (start, _) in &p.sections {
        if *start < prev || *start > p.instrs.len() {
            out.push(whole(format!("section start {start} out of order")));
        }
        prev = *start;
    }
    out
}
