//! Usage-pattern labeler used when no model predictions are available.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::{Prediction, SemanticCategory};
use crate::ir::flow::{is_revert_guard, DefUse};
use crate::ir::{FuncId, Opcode, Operand, Program, StateKind, StateVarId, ValueId, Visibility};

pub const HEURISTIC_CONFIDENCE: f64 = 0.5;

/// Opcodes that contribute to `v`, following definitions backwards.
fn origins(program: &Program<'_>, du: &DefUse, v: ValueId) -> BTreeSet<Opcode> {
    let mut out = BTreeSet::new();
    let mut seen = HashSet::new();
    let mut stack = vec![v];
    while let Some(v) = stack.pop() {
        if !seen.insert(v) {
            continue;
        }
        for site in du.defs.get(&v).into_iter().flatten() {
            let inst = program.instr(*site);
            out.insert(inst.opcode);
            stack.extend(inst.uses().filter_map(|o| match o {
                Operand::Value(u) => Some(*u),
                _ => None,
            }));
        }
    }
    out
}

/// State variables loaded into `v` by a single SLOAD.
fn loaded_var(program: &Program<'_>, du: &DefUse, f: FuncId, op: &Operand) -> Option<StateVarId> {
    let Operand::Value(v) = op else { return None };
    let inst = program.instr(du.sole_def(*v)?);
    if inst.opcode != Opcode::Sload {
        return None;
    }
    program.state_of(f, inst)
}

fn produced_by(program: &Program<'_>, du: &DefUse, op: &Operand, opcode: Opcode) -> bool {
    let Operand::Value(v) = op else { return false };
    du.sole_def(*v).is_some_and(|s| program.instr(s).opcode == opcode)
}

fn decides_guard(program: &Program<'_>, du: &DefUse, v: ValueId) -> bool {
    du.forward(program, &[v])
        .into_iter()
        .any(|s| is_revert_guard(program, s))
}

/// Labels every state variable of the program from how it is used.
///
/// Rules, first match wins: a mapping written with a value derived from
/// CALLVALUE in a public function is a BalanceMapping; a scalar compared with
/// TIMESTAMP is a TimeUint; a scalar compared with CALLER in a revert guard
/// is an OwnerAddress; a scalar given literal values around an external call
/// is a NonreentrantBool. Everything else is Unknown.
pub fn label_heuristic(program: &Program<'_>) -> Vec<Prediction> {
    let mut hits: BTreeMap<StateVarId, BTreeSet<(u8, SemanticCategory)>> = BTreeMap::new();
    let mut hit = |s: StateVarId, rank: u8, c: SemanticCategory| {
        hits.entry(s).or_default().insert((rank, c));
    };
    for f in program.func_ids() {
        let du = DefUse::new(program, f);
        let public = program.function(f).visibility == Visibility::Public;
        let mut literal_stores: BTreeMap<StateVarId, BTreeSet<String>> = BTreeMap::new();
        let mut calls_out = false;
        for (_, inst) in program.func_instrs(f) {
            match inst.opcode {
                Opcode::Sstore => {
                    let (Some(s), Some(value)) = (program.state_of(f, inst), inst.operands.last()) else {
                        continue;
                    };
                    let kind = program.state_var(s).kind;
                    if let Operand::Value(v) = value {
                        if public && kind == StateKind::Mapping && origins(program, &du, *v).contains(&Opcode::CallValue) {
                            hit(s, 0, SemanticCategory::BalanceMapping);
                        }
                    }
                    if let (Operand::Lit(w), StateKind::Scalar) = (value, kind) {
                        literal_stores.entry(s).or_default().insert(w.to_string());
                    }
                }
                Opcode::Lt | Opcode::Gt | Opcode::Eq => {
                    for (a, b) in [(0, 1), (1, 0)] {
                        let (Some(x), Some(y)) = (inst.operands.get(a), inst.operands.get(b)) else {
                            continue;
                        };
                        let Some(s) = loaded_var(program, &du, f, x) else {
                            continue;
                        };
                        if program.state_var(s).kind != StateKind::Scalar {
                            continue;
                        }
                        if produced_by(program, &du, y, Opcode::Timestamp) {
                            hit(s, 1, SemanticCategory::TimeUint);
                        }
                        let guarded = inst.result.is_some_and(|r| decides_guard(program, &du, r));
                        if inst.opcode == Opcode::Eq && guarded && produced_by(program, &du, y, Opcode::Caller) {
                            hit(s, 2, SemanticCategory::OwnerAddress);
                        }
                    }
                }
                op if op.is_contract_call() => calls_out = true,
                _ => {}
            }
        }
        if calls_out {
            for (s, values) in literal_stores {
                if values.len() >= 2 {
                    hit(s, 3, SemanticCategory::NonreentrantBool);
                }
            }
        }
    }
    program
        .state_var_ids()
        .map(|s| {
            let category = hits
                .get(&s)
                .and_then(|h| h.first())
                .map_or(SemanticCategory::Unknown, |(_, c)| *c);
            let info = program.state_info(s);
            let var = program.state_var(s);
            Prediction {
                contract: program.universe.contracts[info.contract].name.clone(),
                slot: var.slot,
                kind: var.kind,
                category,
                confidence: HEURISTIC_CONFIDENCE,
            }
        })
        .collect()
}
