//! State read-write and state-revert dependencies.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::diag::{Diagnostic, Stage};
use crate::ir::flow::{is_revert_guard, predecessors, DefUse};
use crate::ir::{BlockId, InstrRef, Opcode, Program, StateVarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Access {
    Read,
    Write,
}

/// One SLOAD or SSTORE of a resolved state variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RwDep {
    pub block: BlockId,
    pub state: StateVarId,
    pub access: Access,
    pub site: InstrRef,
}

/// Writer block of `state` to the start of the straight branch whose revert
/// guard reads `state`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RevertDep {
    pub writer: BlockId,
    pub target: BlockId,
    pub state: StateVarId,
    /// Block holding the guarded SLOAD.
    pub read_block: BlockId,
}

pub fn extract_rw_deps(program: &Program<'_>) -> Vec<RwDep> {
    let mut out = Vec::new();
    for b in program.block_ids() {
        let f = program.func_of(b);
        for (site, inst) in program.instrs(b) {
            let access = match inst.opcode {
                Opcode::Sload => Access::Read,
                Opcode::Sstore => Access::Write,
                _ => continue,
            };
            if let Some(state) = program.state_of(f, inst) {
                out.push(RwDep {
                    block: b,
                    state,
                    access,
                    site,
                });
            }
        }
    }
    out
}

/// A guarded read: an SLOAD whose value reaches a revert-guarding JUMPI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct GuardedRead {
    pub read: InstrRef,
    pub state: StateVarId,
    pub jumpi: InstrRef,
}

pub fn guarded_reads(program: &Program<'_>, rw: &[RwDep]) -> Vec<GuardedRead> {
    let mut chains = BTreeMap::new();
    let mut out = Vec::new();
    for dep in rw.iter().filter(|d| d.access == Access::Read) {
        let f = program.func_of(dep.block);
        let du = chains.entry(f).or_insert_with(|| DefUse::new(program, f));
        let Some(v) = program.instr(dep.site).result else {
            continue;
        };
        let guard = du
            .forward(program, &[v])
            .into_iter()
            .find(|site| is_revert_guard(program, *site));
        if let Some(jumpi) = guard {
            out.push(GuardedRead {
                read: dep.site,
                state: dep.state,
                jumpi,
            });
        }
    }
    out
}

/// Computes state-revert edges. The target is the unique predecessor of the
/// block holding the guarded read; with several predecessors the read block
/// itself is used and a diagnostic is recorded.
pub fn extract_revert_deps(program: &Program<'_>, rw: &[RwDep]) -> (Vec<RevertDep>, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    let mut starts: BTreeMap<BlockId, BlockId> = BTreeMap::new();
    let mut guarded: BTreeMap<StateVarId, Vec<BlockId>> = BTreeMap::new();
    let mut preds_cache = BTreeMap::new();
    for g in guarded_reads(program, rw) {
        let r = g.read.block;
        guarded.entry(g.state).or_default().push(r);
        if starts.contains_key(&r) {
            continue;
        }
        let f = program.func_of(r);
        let preds = preds_cache
            .entry(f)
            .or_insert_with(|| predecessors(program, f));
        let start = match preds.get(&r).map(Vec::as_slice) {
            Some([only]) => *only,
            Some(many) if many.len() > 1 => {
                diags.push(Diagnostic::info(
                    Stage::Graphs,
                    format!(
                        "guarded read in {} has {} predecessors; revert edge targets the read block",
                        program.block_name(r),
                        many.len()
                    ),
                ));
                r
            }
            _ => r,
        };
        starts.insert(r, start);
    }
    let mut out: BTreeMap<(BlockId, BlockId, StateVarId), BlockId> = BTreeMap::new();
    for w in rw.iter().filter(|d| d.access == Access::Write) {
        for &r in guarded.get(&w.state).into_iter().flatten() {
            let key = (w.block, starts[&r], w.state);
            out.entry(key)
                .and_modify(|rb| *rb = (*rb).min(r))
                .or_insert(r);
        }
    }
    let deps = out
        .into_iter()
        .map(|((writer, target, state), read_block)| RevertDep {
            writer,
            target,
            state,
            read_block,
        })
        .collect();
    (deps, diags)
}
