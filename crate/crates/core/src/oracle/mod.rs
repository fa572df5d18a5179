//! Independent reference implementations. Nothing here touches the ISA,
//! the engine or the tiled memory layout.

pub mod compare;
pub mod emulate;
pub mod f16ref;
pub mod gelu;
pub mod reference;

pub use compare::{compare, ulp_distance, Comparison, Mismatch, Tolerance};
pub use gelu::{gelu_exact, gelu_second_derivative, scan as gelu_scan, segment_bound, GeluScan};
pub use reference::{
    argmax, ref_decoder_layer, ref_embedding, ref_generate, ref_lm_head, RefModel, RefStep, RefWeights,
};
