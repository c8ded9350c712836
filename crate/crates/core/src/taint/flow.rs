//! Taint keys and the per-block flow edges propagation runs over.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::graphs::{Access, CallGraph, RevertDep, Sdg};
use crate::ir::{FuncId, InstrRef, Opcode, Operand, Program, StateVarId, ValueId, Visibility};

/// Something that can carry taint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum TaintKey {
    Value { func: FuncId, id: ValueId },
    Param { func: FuncId, idx: u32 },
    State(StateVarId),
    /// The single summarized memory cell of a function.
    Memory(FuncId),
    Return(FuncId),
}

impl TaintKey {
    pub fn func(&self) -> Option<FuncId> {
        match *self {
            TaintKey::Value { func, .. }
            | TaintKey::Param { func, .. }
            | TaintKey::Memory(func)
            | TaintKey::Return(func) => Some(func),
            TaintKey::State(_) => None,
        }
    }
}

/// `src` taints `dst` when `fires`; otherwise the edge is recorded and never
/// fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct FlowEdge {
    pub src: TaintKey,
    pub dst: TaintKey,
    pub site: InstrRef,
    pub fires: bool,
}

/// Opcodes whose right operands pass taint to the left operand.
pub fn default_taint_opcodes() -> BTreeSet<Opcode> {
    use Opcode::*;
    [
        Const, Add, Sub, Mul, Div, Lt, Gt, Eq, IsZero, And, Or, Sha3, Sload, Sstore, Mload, Mstore, CallDataLoad,
        Call, CallValueCall, StaticCall, DelegateCall, Return, Phi, InternalCall,
    ]
    .into_iter()
    .collect()
}

pub fn operand_key(f: FuncId, op: &Operand) -> Option<TaintKey> {
    match op {
        Operand::Value(id) => Some(TaintKey::Value { func: f, id: *id }),
        Operand::Param(idx) => Some(TaintKey::Param { func: f, idx: *idx }),
        Operand::Lit(_) => None,
    }
}

/// Flow edges, seeds and revert-edge conditions of one program.
pub struct FlowGraph {
    pub edges: Vec<Vec<FlowEdge>>,
    /// Source results seeded when their block is visited.
    pub block_seeds: Vec<Vec<TaintKey>>,
    /// Parameters seeded when their function is first visited.
    pub func_seeds: Vec<Vec<TaintKey>>,
    /// For each revert edge, the stored values whose taint lets the edge be
    /// followed.
    pub revert_conditions: HashMap<RevertDep, Vec<TaintKey>>,
    /// Loads of the state variable in the guarded read block, tainted when
    /// the revert edge is followed.
    pub revert_taints: HashMap<RevertDep, Vec<TaintKey>>,
}

impl FlowGraph {
    pub fn new(program: &Program<'_>, cg: &CallGraph, sdg: &Sdg, opcodes: &BTreeSet<Opcode>) -> Self {
        let writes: BTreeSet<InstrRef> = sdg
            .rw
            .iter()
            .filter(|d| d.access == Access::Write)
            .map(|d| d.site)
            .collect();
        let reads: BTreeSet<InstrRef> = sdg
            .rw
            .iter()
            .filter(|d| d.access == Access::Read)
            .map(|d| d.site)
            .collect();
        let mut edges = vec![Vec::new(); program.num_blocks()];
        for b in program.block_ids() {
            let f = program.func_of(b);
            for (site, inst) in program.instrs(b) {
                let fires = opcodes.contains(&inst.opcode);
                let mut push = |src: Option<TaintKey>, dst: TaintKey| {
                    if let Some(src) = src {
                        edges[b.0 as usize].push(FlowEdge { src, dst, site, fires });
                    }
                };
                let result = inst.result.map(|id| TaintKey::Value { func: f, id });
                let state = program.state_of(f, inst).map(TaintKey::State);
                match inst.opcode {
                    Opcode::Sload => {
                        let Some(r) = result else { continue };
                        if reads.contains(&site) {
                            push(state, r);
                        }
                        for op in inst.uses() {
                            push(operand_key(f, op), r);
                        }
                    }
                    Opcode::Sstore => {
                        if let (Some(s), true) = (state, writes.contains(&site)) {
                            push(inst.operands.last().and_then(|v| operand_key(f, v)), s);
                        }
                    }
                    Opcode::Mstore => {
                        push(inst.operands.last().and_then(|v| operand_key(f, v)), TaintKey::Memory(f));
                    }
                    Opcode::Mload => {
                        let Some(r) = result else { continue };
                        push(Some(TaintKey::Memory(f)), r);
                        for op in &inst.operands {
                            push(operand_key(f, op), r);
                        }
                    }
                    Opcode::Return => {
                        for op in &inst.operands {
                            push(operand_key(f, op), TaintKey::Return(f));
                        }
                    }
                    op if op.is_call() => match cg.resolved(site) {
                        Some(g) => {
                            let args = match op {
                                Opcode::CallValueCall => &inst.operands[1..],
                                _ => &inst.operands[..],
                            };
                            for (i, a) in args.iter().enumerate() {
                                push(operand_key(f, a), TaintKey::Param { func: g, idx: i as u32 });
                            }
                            if let Some(r) = result {
                                push(Some(TaintKey::Return(g)), r);
                            }
                        }
                        None => {
                            if let Some(r) = result {
                                for op in inst.uses() {
                                    push(operand_key(f, op), r);
                                }
                            }
                        }
                    },
                    _ => {
                        if let Some(r) = result {
                            for op in inst.uses() {
                                push(operand_key(f, op), r);
                            }
                        }
                    }
                }
            }
        }
        let (block_seeds, func_seeds) = seed_sources(program, cg);
        let mut revert_conditions = HashMap::new();
        let mut revert_taints = HashMap::new();
        for dep in &sdg.revert {
            let g = program.func_of(dep.read_block);
            let loads = program
                .instrs(dep.read_block)
                .filter(|(_, i)| i.opcode == Opcode::Sload && program.state_of(g, i) == Some(dep.state))
                .filter_map(|(_, i)| i.result.map(|id| TaintKey::Value { func: g, id }))
                .collect();
            revert_taints.insert(*dep, loads);
            let f = program.func_of(dep.writer);
            let keys = program
                .instrs(dep.writer)
                .filter(|(site, i)| {
                    i.opcode == Opcode::Sstore && writes.contains(site) && program.state_of(f, i) == Some(dep.state)
                })
                .filter_map(|(_, i)| i.operands.last().and_then(|v| operand_key(f, v)))
                .collect();
            revert_conditions.insert(*dep, keys);
        }
        FlowGraph {
            edges,
            block_seeds,
            func_seeds,
            revert_conditions,
            revert_taints,
        }
    }
}

/// Taint sources: parameters of public functions, parameters passed at
/// cross-contract call sites, and CALLDATALOAD/CALLVALUE/CALLER results in
/// public functions. Returned per block and per function.
pub fn seed_sources(program: &Program<'_>, cg: &CallGraph) -> (Vec<Vec<TaintKey>>, Vec<Vec<TaintKey>>) {
    let mut block_seeds = vec![Vec::new(); program.num_blocks()];
    let mut func_seeds: Vec<BTreeSet<TaintKey>> = vec![BTreeSet::new(); program.num_funcs()];
    for f in program.func_ids() {
        let func = program.function(f);
        if func.visibility != Visibility::Public {
            continue;
        }
        for idx in 0..func.params.len() as u32 {
            func_seeds[f.0 as usize].insert(TaintKey::Param { func: f, idx });
        }
        for (site, inst) in program.func_instrs(f) {
            if matches!(inst.opcode, Opcode::CallDataLoad | Opcode::CallValue | Opcode::Caller) {
                if let Some(id) = inst.result {
                    block_seeds[site.block.0 as usize].push(TaintKey::Value { func: f, id });
                }
            }
        }
    }
    for e in &cg.edges {
        let crate::graphs::CallNode::Func(g) = e.callee else {
            continue;
        };
        if e.kind != crate::graphs::CallKind::CrossContract {
            continue;
        }
        for idx in 0..program.function(g).params.len() as u32 {
            func_seeds[g.0 as usize].insert(TaintKey::Param { func: g, idx });
        }
    }
    (block_seeds, func_seeds.into_iter().map(|s| s.into_iter().collect()).collect())
}
