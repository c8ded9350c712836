//! Taint propagation over the SDG and confirmation of indicators.

mod confirm;
mod engine;
mod flow;

pub use confirm::{confirm_indicators, global_taint, ConfirmConfig, Severity, TaintFinding};
pub use engine::{propagate_parallel, propagate_serial, TaintConfig, TaintContext, TaintOutcome, TaintState, TaintStats};
pub use flow::{default_taint_opcodes, operand_key, seed_sources, FlowEdge, FlowGraph, TaintKey};

#[cfg(test)]
mod tests;
