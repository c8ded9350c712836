//! Turns indicators plus propagated taint into findings.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use super::engine::TaintState;
use super::flow::{operand_key, TaintKey};
use crate::detect::{EntryPath, Indicator, Rule};
use crate::graphs::{Access, Sdg};
use crate::ir::{BlockId, Callee, FuncId, InstrRef, Opcode, Operand, Program, StateKind, StateVarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// Reachable from an entry and, where the rule asks for it, tainted.
    Confirmed,
    /// Reachable, but the operands the rule cares about stayed clean.
    Reachable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaintFinding {
    /// Index into the indicator list.
    pub indicator: usize,
    pub entry: BlockId,
    pub severity: Severity,
    /// Witness block path from the entry to the indicator.
    pub path: Vec<BlockId>,
    pub path_string: String,
    pub tainted_functions: Vec<FuncId>,
    pub tainted_state_vars: Vec<StateVarId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfirmConfig {
    pub overflow_requires_taint: bool,
}

impl Default for ConfirmConfig {
    fn default() -> Self {
        ConfirmConfig {
            overflow_requires_taint: true,
        }
    }
}

struct Scope<'a> {
    program: &'a Program<'a>,
    sdg: &'a Sdg,
    state: &'a TaintState,
    /// Functions holding a tainted value or parameter.
    value_tainted: BTreeSet<FuncId>,
}

impl<'a> Scope<'a> {
    fn new(program: &'a Program<'a>, sdg: &'a Sdg, state: &'a TaintState) -> Self {
        let value_tainted = state
            .tainted
            .iter()
            .filter(|k| matches!(k, TaintKey::Value { .. } | TaintKey::Param { .. }))
            .filter_map(TaintKey::func)
            .collect();
        Scope {
            program,
            sdg,
            state,
            value_tainted,
        }
    }

    fn is_tainted(&self, k: TaintKey) -> bool {
        self.state.tainted.contains(&k)
    }

    fn state_tainted(&self, s: StateVarId) -> bool {
        self.is_tainted(TaintKey::State(s))
    }

    fn call_has_tainted_operand(&self, f: FuncId, site: InstrRef) -> bool {
        self.program
            .instr(site)
            .uses()
            .filter_map(|o| operand_key(f, o))
            .any(|k| self.is_tainted(k))
    }

    /// Scalars loaded in `blocks` whose value is the address of an external
    /// call carrying taint.
    fn tainted_call_addresses(&self, blocks: &BTreeSet<BlockId>, f: Option<FuncId>) -> BTreeSet<StateVarId> {
        let mut out = BTreeSet::new();
        for &b in blocks {
            let g = self.program.func_of(b);
            if f.is_some_and(|f| f != g) {
                continue;
            }
            for (site, inst) in self.program.instrs(b) {
                let Some(Callee::Dynamic {
                    address: Operand::Value(addr),
                    ..
                }) = &inst.callee
                else {
                    continue;
                };
                if !self.call_has_tainted_operand(g, site) {
                    continue;
                }
                for (_, load) in self.program.func_instrs(g) {
                    if load.opcode != Opcode::Sload || load.result != Some(*addr) {
                        continue;
                    }
                    if let Some(s) = self.program.state_of(g, load) {
                        if self.program.state_var(s).kind == StateKind::Scalar {
                            out.insert(s);
                        }
                    }
                }
            }
        }
        out
    }

    fn tainted_functions(&self, visited: &BTreeSet<BlockId>) -> Vec<FuncId> {
        let mut out = BTreeSet::new();
        for &b in visited {
            let f = self.program.func_of(b);
            if self.value_tainted.contains(&f) {
                out.insert(f);
            }
        }
        for d in &self.sdg.rw {
            if visited.contains(&d.block) && self.state_tainted(d.state) {
                out.insert(self.program.func_of(d.block));
            }
        }
        out.into_iter().collect()
    }

    fn tainted_state_vars(&self, visited: &BTreeSet<BlockId>) -> Vec<StateVarId> {
        let mut out: BTreeSet<StateVarId> = self
            .sdg
            .rw
            .iter()
            .filter(|d| visited.contains(&d.block) && self.state_tainted(d.state))
            .map(|d| d.state)
            .collect();
        out.extend(self.tainted_call_addresses(visited, None));
        out.into_iter().collect()
    }

    fn var_list(&self, vars: impl IntoIterator<Item = StateVarId>) -> String {
        let mut vars: Vec<StateVarId> = vars.into_iter().collect();
        vars.sort_by_key(|s| (self.program.state_var(*s).slot, self.program.state_name(*s)));
        vars.dedup();
        let names: Vec<&str> = vars.iter().map(|s| self.program.state_name(*s)).collect();
        format!("[{}]", names.join(","))
    }

    /// State written with tainted values in `f`, plus scalars used as the
    /// address of a tainted external call in `f`.
    fn sinks(&self, f: FuncId, visited: &BTreeSet<BlockId>) -> BTreeSet<StateVarId> {
        let mut out: BTreeSet<StateVarId> = self
            .sdg
            .rw
            .iter()
            .filter(|d| d.access == Access::Write && visited.contains(&d.block))
            .filter(|d| self.program.func_of(d.block) == f)
            .filter(|d| {
                self.program
                    .instr(d.site)
                    .operands
                    .last()
                    .and_then(|v| operand_key(f, v))
                    .is_some_and(|k| self.is_tainted(k))
            })
            .map(|d| d.state)
            .collect();
        out.extend(self.tainted_call_addresses(visited, Some(f)));
        out
    }

    /// `A.f→B.g→[x]→B.h→[y,z]`: the function chain of the path, then
    /// followed state-revert hops, then the sinks of the last function.
    fn path_string(&self, path: &[BlockId], visited: &BTreeSet<BlockId>) -> String {
        let mut chain: Vec<FuncId> = Vec::new();
        for &b in path {
            let f = self.program.func_of(b);
            if chain.last() != Some(&f) {
                chain.push(f);
            }
        }
        let mut out: Vec<String> = chain.iter().map(|f| self.program.func_name(*f).to_string()).collect();
        let mut seen: HashSet<FuncId> = chain.iter().copied().collect();
        let Some(mut last) = chain.last().copied() else {
            return String::new();
        };
        loop {
            let mut hops: BTreeMap<FuncId, BTreeSet<StateVarId>> = BTreeMap::new();
            for d in &self.sdg.revert {
                if self.program.func_of(d.writer) != last
                    || !visited.contains(&d.writer)
                    || !visited.contains(&d.target)
                    || self.state.pending_visits.contains(d)
                {
                    continue;
                }
                let g = self.program.func_of(d.target);
                if !seen.contains(&g) {
                    hops.entry(g).or_default().insert(d.state);
                }
            }
            let Some((g, vars)) = hops.into_iter().next() else {
                break;
            };
            out.push(self.var_list(vars));
            out.push(self.program.func_name(g).to_string());
            seen.insert(g);
            last = g;
        }
        let sinks = self.sinks(last, visited);
        if !sinks.is_empty() {
            out.push(self.var_list(sinks));
        }
        out.join("→")
    }
}

fn severity(program: &Program<'_>, state: &TaintState, ind: &Indicator, cfg: &ConfirmConfig) -> Severity {
    if ind.rule != Rule::Overflow || !cfg.overflow_requires_taint {
        return Severity::Confirmed;
    }
    let f = program.func_of(ind.block);
    let tainted = program
        .instr(ind.site)
        .uses()
        .filter_map(|o| operand_key(f, o))
        .any(|k| state.tainted.contains(&k));
    if tainted {
        Severity::Confirmed
    } else {
        Severity::Reachable
    }
}

/// One finding per (indicator, entry) pair with a path, witnessed by the
/// first path found for the pair. Findings come out sorted by indicator, then
/// entry.
pub fn confirm_indicators(
    program: &Program<'_>,
    sdg: &Sdg,
    state: &TaintState,
    indicators: &[Indicator],
    paths: &[EntryPath],
    cfg: &ConfirmConfig,
) -> Vec<TaintFinding> {
    let scope = Scope::new(program, sdg, state);
    let mut first: BTreeMap<(usize, BlockId), &EntryPath> = BTreeMap::new();
    for p in paths {
        first.entry((p.indicator, p.entry)).or_insert(p);
    }
    let empty = BTreeSet::new();
    first
        .into_iter()
        .map(|((indicator, entry), p)| {
            let visited = state.visited_by_entry.get(&entry).unwrap_or(&empty);
            TaintFinding {
                indicator,
                entry,
                severity: severity(program, state, &indicators[indicator], cfg),
                path: p.blocks.clone(),
                path_string: scope.path_string(&p.blocks, visited),
                tainted_functions: scope.tainted_functions(visited),
                tainted_state_vars: scope.tainted_state_vars(visited),
            }
        })
        .collect()
}

/// Tainted functions and state variables over everything visited.
pub fn global_taint(program: &Program<'_>, sdg: &Sdg, state: &TaintState) -> (Vec<FuncId>, Vec<StateVarId>) {
    let scope = Scope::new(program, sdg, state);
    (
        scope.tainted_functions(&state.visited),
        scope.tainted_state_vars(&state.visited),
    )
}
