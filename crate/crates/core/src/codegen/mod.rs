//! Per-core program generation.

mod emit;
mod shard;

pub use emit::{
    check_lengths, emit_constants, emit_decoder_layer, emit_embedding, emit_full_program, emit_lm_head, emit_pass,
    n_passes, pass_program, CodegenOptions, SEC_ATTENTION, SEC_EMBEDDING, SEC_FFN, SEC_LM_HEAD, SEC_LN, SEC_QKV,
    SEC_SYNC,
};
pub use shard::{ShardSpec, SHARDED_MATRICES};
