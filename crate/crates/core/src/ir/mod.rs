//! Three-address IR: data model, text format and validation.

pub mod flow;
mod model;
mod parse;
mod program;
mod serialize;
mod validate;

pub use model::*;
pub use parse::{parse_ir, parse_unvalidated, IR_VERSION};
pub use program::{BlockId, BlockInfo, FuncId, FuncInfo, InstrRef, Program, StateVarId, StateVarInfo};
pub use serialize::{format_instruction, format_operand, serialize_ir};
pub use validate::{validate, Violation, ViolationKind};

pub(crate) use parse::parse_address;

#[derive(Debug, thiserror::Error)]
pub enum IrError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown opcode `{opcode}`")]
    UnknownOpcode { line: usize, opcode: String },
    #[error("duplicate block id `{id}`")]
    DuplicateBlockId { id: String },
    #[error("{location}: {message}")]
    UndefinedValueUse { location: String, message: String },
    #[error("invalid IR: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}
