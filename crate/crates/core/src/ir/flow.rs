//! Intra-function def-use helpers shared by the graph builder, the indicator
//! rules and the heuristic labeler.

use std::collections::{BTreeSet, HashMap, HashSet};

use super::model::{Opcode, ValueId};
use super::program::{BlockId, FuncId, InstrRef, Program};

/// Def-use chains of one function. Values may have several definitions; the
/// chains are flow-insensitive.
pub struct DefUse {
    pub defs: HashMap<ValueId, Vec<InstrRef>>,
    pub uses: HashMap<ValueId, Vec<InstrRef>>,
}

impl DefUse {
    pub fn new(program: &Program<'_>, f: FuncId) -> Self {
        DefUse {
            defs: program.def_sites(f),
            uses: program.use_sites(f),
        }
    }

    /// Every instruction that (transitively) consumes one of `seeds`. Flow
    /// continues through any instruction that defines a value.
    pub fn forward(&self, program: &Program<'_>, seeds: &[ValueId]) -> BTreeSet<InstrRef> {
        let mut reached = BTreeSet::new();
        let mut seen: HashSet<ValueId> = seeds.iter().copied().collect();
        let mut stack: Vec<ValueId> = seeds.to_vec();
        while let Some(v) = stack.pop() {
            for site in self.uses.get(&v).into_iter().flatten() {
                if !reached.insert(*site) {
                    continue;
                }
                if let Some(r) = program.instr(*site).result {
                    if seen.insert(r) {
                        stack.push(r);
                    }
                }
            }
        }
        reached
    }

    /// Instructions defining `v`, if every definition is a single instruction
    /// kind of interest; used for "operand loads X" checks.
    pub fn sole_def(&self, v: ValueId) -> Option<InstrRef> {
        match self.defs.get(&v).map(Vec::as_slice) {
            Some([one]) => Some(*one),
            _ => None,
        }
    }
}

/// Whether the straight-line path starting at `start` (following unconditional
/// jumps only) ends in REVERT before meeting any conditional jump.
pub fn straight_line_reverts(program: &Program<'_>, start: BlockId) -> bool {
    let mut seen = HashSet::new();
    let mut b = start;
    loop {
        if !seen.insert(b) {
            return false;
        }
        match program.block(b).terminator().map(|t| t.opcode) {
            Some(Opcode::Revert) => return true,
            Some(Opcode::Jump) => match program.successors(b).as_slice() {
                [next] => b = *next,
                _ => return false,
            },
            _ => return false,
        }
    }
}

/// A JUMPI guards a revert when one of its successors reverts on a straight
/// line.
pub fn is_revert_guard(program: &Program<'_>, jumpi: InstrRef) -> bool {
    let inst = program.instr(jumpi);
    if inst.opcode != Opcode::JumpI {
        return false;
    }
    let f = program.func_of(jumpi.block);
    inst.targets
        .iter()
        .filter_map(|l| program.lookup_block(f, *l))
        .any(|b| straight_line_reverts(program, b))
}

/// Immediate CFG predecessors of each block in `f`.
pub fn predecessors(program: &Program<'_>, f: FuncId) -> HashMap<BlockId, Vec<BlockId>> {
    let mut preds: HashMap<BlockId, Vec<BlockId>> = HashMap::new();
    for b in program.func_info(f).blocks() {
        for s in program.successors(b) {
            preds.entry(s).or_default().push(b);
        }
    }
    preds
}
