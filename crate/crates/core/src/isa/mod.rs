//! The instruction set: in-memory form, canonical assembly text, and static
//! validation.

mod instr;
mod parse;
mod shape;
mod validate;

pub use instr::*;
pub use parse::{parse_asm, parse_operand};
pub use shape::{InstrShape, ShapeState};
pub use validate::{validate, Diagnostic};

#[cfg(test)]
mod proptests;
