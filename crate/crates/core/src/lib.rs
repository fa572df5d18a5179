//! Functional and cycle-analytic simulator of the DFX multi-device GPT-2
//! text-generation appliance.

pub mod cluster;
pub mod codegen;
pub mod engine;
pub mod error;
pub mod isa;
pub mod memory;
pub mod model;
pub mod network;
pub mod oracle;

pub use error::{Error, Result};
