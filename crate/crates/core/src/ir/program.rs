//! Dense, read-only index over a validated [`Universe`].
//!
//! Every analysis addresses blocks, functions and state variables through the
//! numeric ids defined here. Ids follow the canonical universe order, so they
//! are stable for a given input.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use super::model::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct FuncId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct BlockId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct StateVarId(pub u32);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Position of one instruction in the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct InstrRef {
    pub block: BlockId,
    pub index: u32,
}

#[derive(Debug, Clone)]
pub struct FuncInfo {
    pub contract: usize,
    pub index: usize,
    /// `Contract.function`
    pub name: String,
    pub entry: BlockId,
    pub first_block: u32,
    pub block_count: u32,
}

impl FuncInfo {
    pub fn blocks(&self) -> impl Iterator<Item = BlockId> {
        (self.first_block..self.first_block + self.block_count).map(BlockId)
    }
}

#[derive(Debug, Clone)]
pub struct BlockInfo {
    pub func: FuncId,
    pub index: usize,
    /// `Contract.function.bN`
    pub name: String,
}

#[derive(Debug, Clone)]
pub struct StateVarInfo {
    pub contract: usize,
    pub index: usize,
    /// `Contract.var`
    pub name: String,
}

pub struct Program<'u> {
    pub universe: &'u Universe,
    funcs: Vec<FuncInfo>,
    blocks: Vec<BlockInfo>,
    state_vars: Vec<StateVarInfo>,
    func_by_name: HashMap<(&'u str, &'u str), FuncId>,
    block_by_label: HashMap<(FuncId, BlockLabel), BlockId>,
    state_by_name: HashMap<(usize, &'u str), StateVarId>,
    contract_by_name: HashMap<&'u str, usize>,
}

impl<'u> Program<'u> {
    pub fn new(universe: &'u Universe) -> Self {
        let mut p = Program {
            universe,
            funcs: Vec::new(),
            blocks: Vec::new(),
            state_vars: Vec::new(),
            func_by_name: HashMap::new(),
            block_by_label: HashMap::new(),
            state_by_name: HashMap::new(),
            contract_by_name: HashMap::new(),
        };
        for (ci, c) in universe.contracts.iter().enumerate() {
            p.contract_by_name.insert(c.name.as_str(), ci);
            for (si, s) in c.state_vars.iter().enumerate() {
                let id = StateVarId(p.state_vars.len() as u32);
                p.state_by_name.insert((ci, s.name.as_str()), id);
                p.state_vars.push(StateVarInfo {
                    contract: ci,
                    index: si,
                    name: format!("{}.{}", c.name, s.name),
                });
            }
            for (fi, f) in c.functions.iter().enumerate() {
                let fid = FuncId(p.funcs.len() as u32);
                let first = p.blocks.len() as u32;
                let mut entry = BlockId(first);
                for (bi, b) in f.blocks.iter().enumerate() {
                    let bid = BlockId(p.blocks.len() as u32);
                    if b.label == f.entry {
                        entry = bid;
                    }
                    p.block_by_label.insert((fid, b.label), bid);
                    p.blocks.push(BlockInfo {
                        func: fid,
                        index: bi,
                        name: format!("{}.{}.{}", c.name, f.name, b.label),
                    });
                }
                p.func_by_name.insert((c.name.as_str(), f.name.as_str()), fid);
                p.funcs.push(FuncInfo {
                    contract: ci,
                    index: fi,
                    name: format!("{}.{}", c.name, f.name),
                    entry,
                    first_block: first,
                    block_count: f.blocks.len() as u32,
                });
            }
        }
        p
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_funcs(&self) -> usize {
        self.funcs.len()
    }

    pub fn func_ids(&self) -> impl Iterator<Item = FuncId> {
        (0..self.funcs.len() as u32).map(FuncId)
    }

    pub fn block_ids(&self) -> impl Iterator<Item = BlockId> {
        (0..self.blocks.len() as u32).map(BlockId)
    }

    pub fn state_var_ids(&self) -> impl Iterator<Item = StateVarId> {
        (0..self.state_vars.len() as u32).map(StateVarId)
    }

    pub fn func_info(&self, f: FuncId) -> &FuncInfo {
        &self.funcs[f.0 as usize]
    }

    pub fn block_info(&self, b: BlockId) -> &BlockInfo {
        &self.blocks[b.0 as usize]
    }

    pub fn state_info(&self, s: StateVarId) -> &StateVarInfo {
        &self.state_vars[s.0 as usize]
    }

    pub fn contract_of(&self, f: FuncId) -> &'u Contract {
        &self.universe.contracts[self.func_info(f).contract]
    }

    pub fn function(&self, f: FuncId) -> &'u Function {
        let info = self.func_info(f);
        &self.universe.contracts[info.contract].functions[info.index]
    }

    pub fn block(&self, b: BlockId) -> &'u BasicBlock {
        let info = self.block_info(b);
        &self.function(info.func).blocks[info.index]
    }

    pub fn instr(&self, r: InstrRef) -> &'u Instruction {
        &self.block(r.block).instructions[r.index as usize]
    }

    pub fn state_var(&self, s: StateVarId) -> &'u StateVar {
        let info = self.state_info(s);
        &self.universe.contracts[info.contract].state_vars[info.index]
    }

    pub fn func_of(&self, b: BlockId) -> FuncId {
        self.block_info(b).func
    }

    pub fn func_name(&self, f: FuncId) -> &str {
        &self.func_info(f).name
    }

    pub fn block_name(&self, b: BlockId) -> &str {
        &self.block_info(b).name
    }

    /// Short state variable name without the contract prefix.
    pub fn state_name(&self, s: StateVarId) -> &'u str {
        &self.state_var(s).name
    }

    pub fn lookup_func(&self, contract: &str, function: &str) -> Option<FuncId> {
        self.func_by_name.get(&(contract, function)).copied()
    }

    pub fn lookup_qualified(&self, qualified: &str) -> Option<FuncId> {
        let (c, f) = qualified.split_once('.')?;
        self.lookup_func(c, f)
    }

    pub fn contract_index(&self, name: &str) -> Option<usize> {
        self.contract_by_name.get(name).copied()
    }

    pub fn lookup_block(&self, f: FuncId, label: BlockLabel) -> Option<BlockId> {
        self.block_by_label.get(&(f, label)).copied()
    }

    pub fn lookup_block_name(&self, name: &str) -> Option<BlockId> {
        let (c, rest) = name.split_once('.')?;
        let (f, b) = rest.split_once('.')?;
        let label = b.strip_prefix('b')?.parse().ok().map(BlockLabel)?;
        self.lookup_block(self.lookup_func(c, f)?, label)
    }

    pub fn lookup_state(&self, contract: usize, name: &str) -> Option<StateVarId> {
        self.state_by_name.get(&(contract, name)).copied()
    }

    pub fn lookup_state_slot(&self, contract: usize, slot: Word, kind: StateKind) -> Option<StateVarId> {
        let c = &self.universe.contracts[contract];
        let idx = c
            .state_vars
            .iter()
            .position(|s| s.slot == slot && s.kind == kind)?;
        self.lookup_state(contract, &c.state_vars[idx].name)
    }

    /// State variable touched by a SLOAD/SSTORE in function `f`.
    pub fn state_of(&self, f: FuncId, inst: &Instruction) -> Option<StateVarId> {
        let r = inst.state_ref.as_ref()?;
        self.lookup_state(self.func_info(f).contract, &r.var)
    }

    pub fn entry_of(&self, f: FuncId) -> BlockId {
        self.func_info(f).entry
    }

    pub fn is_entry(&self, b: BlockId) -> bool {
        self.entry_of(self.func_of(b)) == b
    }

    /// Intra-function successors, deduplicated and sorted by block id.
    pub fn successors(&self, b: BlockId) -> Vec<BlockId> {
        let f = self.func_of(b);
        let mut out: Vec<BlockId> = self
            .block(b)
            .successors()
            .iter()
            .filter_map(|l| self.lookup_block(f, *l))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn instrs(&self, b: BlockId) -> impl Iterator<Item = (InstrRef, &'u Instruction)> {
        self.block(b)
            .instructions
            .iter()
            .enumerate()
            .map(move |(i, inst)| {
                (
                    InstrRef {
                        block: b,
                        index: i as u32,
                    },
                    inst,
                )
            })
    }

    pub fn func_instrs(&self, f: FuncId) -> impl Iterator<Item = (InstrRef, &'u Instruction)> + '_ {
        self.func_info(f).blocks().flat_map(move |b| self.instrs(b))
    }

    /// Definition sites of every value in `f`.
    pub fn def_sites(&self, f: FuncId) -> HashMap<ValueId, Vec<InstrRef>> {
        let mut out: HashMap<ValueId, Vec<InstrRef>> = HashMap::new();
        for (r, inst) in self.func_instrs(f) {
            if let Some(v) = inst.result {
                out.entry(v).or_default().push(r);
            }
        }
        out
    }

    /// Instructions reading each value in `f`.
    pub fn use_sites(&self, f: FuncId) -> HashMap<ValueId, Vec<InstrRef>> {
        let mut out: HashMap<ValueId, Vec<InstrRef>> = HashMap::new();
        for (r, inst) in self.func_instrs(f) {
            for v in inst.used_values() {
                out.entry(v).or_default().push(r);
            }
        }
        out
    }
}
