//! Cross-contract vulnerability analysis for EVM smart contracts.

pub mod detect;
pub mod diag;
pub mod evm;
pub mod graphs;
pub mod ir;
pub mod pipeline;
pub mod semantics;
pub mod taint;
