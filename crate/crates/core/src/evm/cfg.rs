//! Basic blocks and jump resolution over disassembled code.
//!
//! Jump targets come from a worklist simulation in which every stack slot is
//! either a known constant or unknown. Entry stacks are joined slot by slot
//! (equal constants survive, anything else becomes unknown) and a block is
//! re-simulated at most twice after its first visit.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use ruint::aliases::U256;

use super::disasm::EvmOp;
use super::opcodes::{ends_block, info, JUMP, JUMPDEST, JUMPI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AbsVal {
    Const(U256),
    Unknown,
}

impl AbsVal {
    pub fn as_const(self) -> Option<U256> {
        match self {
            AbsVal::Const(c) => Some(c),
            AbsVal::Unknown => None,
        }
    }
}

/// Evaluates a pure opcode over constant arguments, top of stack first.
pub fn fold(name: &str, args: &[U256]) -> Option<U256> {
    let a = *args.first()?;
    let b = args.get(1).copied().unwrap_or_default();
    let bool_word = |x: bool| U256::from(x as u8);
    let shift = |s: U256| -> Option<usize> { (s < U256::from(256)).then(|| s.to::<usize>()) };
    Some(match name {
        "ADD" => a.wrapping_add(b),
        "SUB" => a.wrapping_sub(b),
        "MUL" => a.wrapping_mul(b),
        "DIV" => a.checked_div(b).unwrap_or_default(),
        "MOD" => a.checked_rem(b).unwrap_or_default(),
        "EXP" => a.wrapping_pow(b),
        "LT" => bool_word(a < b),
        "GT" => bool_word(a > b),
        "EQ" => bool_word(a == b),
        "ISZERO" => bool_word(a.is_zero()),
        "AND" => a & b,
        "OR" => a | b,
        "XOR" => a ^ b,
        "NOT" => !a,
        "SHL" => shift(a).map_or(U256::ZERO, |s| b << s),
        "SHR" => shift(a).map_or(U256::ZERO, |s| b >> s),
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvmBlock {
    /// Byte offset of the first op.
    pub start: usize,
    /// Op indices `[first, end)`.
    pub first: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Block(usize),
    /// Dynamic jump whose destination could not be determined.
    Unresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Fallthrough,
    Jump,
    Taken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EvmEdge {
    pub src: usize,
    pub dst: Target,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Default)]
pub struct EvmCfg {
    pub ops: Vec<EvmOp>,
    pub blocks: Vec<EvmBlock>,
    pub edges: BTreeSet<EvmEdge>,
    /// Joined abstract entry stack per reached block, bottom first.
    pub entry_stacks: Vec<Option<Vec<AbsVal>>>,
    /// Blocks whose simulation popped an empty stack.
    pub underflow: BTreeSet<usize>,
    /// Blocks reached with differing stack heights.
    pub height_conflicts: BTreeSet<usize>,
}

impl EvmCfg {
    pub fn block_at(&self, offset: usize) -> Option<usize> {
        self.blocks.binary_search_by_key(&offset, |b| b.start).ok()
    }

    pub fn ops_of(&self, b: usize) -> &[EvmOp] {
        &self.ops[self.blocks[b].first..self.blocks[b].end]
    }

    pub fn successors(&self, b: usize) -> impl Iterator<Item = &EvmEdge> {
        self.edges.range(
            EvmEdge {
                src: b,
                dst: Target::Block(0),
                kind: EdgeKind::Fallthrough,
            }..EvmEdge {
                src: b + 1,
                dst: Target::Block(0),
                kind: EdgeKind::Fallthrough,
            },
        )
    }

    /// Resolved successor blocks of `b`.
    pub fn succ_blocks(&self, b: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .successors(b)
            .filter_map(|e| match e.dst {
                Target::Block(t) => Some(t),
                Target::Unresolved => None,
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

fn split_blocks(ops: &[EvmOp]) -> Vec<EvmBlock> {
    let mut blocks = Vec::new();
    let mut first = 0;
    for (i, op) in ops.iter().enumerate() {
        if op.byte == JUMPDEST && i > first {
            blocks.push(EvmBlock {
                start: ops[first].offset,
                first,
                end: i,
            });
            first = i;
        }
        let name_known = info(op.byte).is_some();
        if ends_block(op.byte) || op.byte == JUMPI || !name_known {
            blocks.push(EvmBlock {
                start: ops[first].offset,
                first,
                end: i + 1,
            });
            first = i + 1;
        }
    }
    if first < ops.len() {
        blocks.push(EvmBlock {
            start: ops[first].offset,
            first,
            end: ops.len(),
        });
    }
    blocks
}

/// Result of simulating one block on an abstract stack.
pub struct BlockSim {
    pub exit: Vec<AbsVal>,
    /// Popped jump target (top of stack at JUMP/JUMPI).
    pub jump_target: Option<AbsVal>,
    pub underflow: bool,
}

pub fn simulate(ops: &[EvmOp], mut stack: Vec<AbsVal>) -> BlockSim {
    let mut jump_target = None;
    for op in ops {
        let Some(i) = info(op.byte) else {
            break;
        };
        if stack.len() < i.pops as usize {
            return BlockSim {
                exit: stack,
                jump_target: None,
                underflow: true,
            };
        }
        let n = stack.len();
        match op.byte {
            0x5f..=0x7f => stack.push(AbsVal::Const(op.push_value().unwrap_or_default())),
            0x80..=0x8f => stack.push(stack[n - i.pops as usize]),
            0x90..=0x9f => stack.swap(n - 1, n - i.pops as usize),
            JUMP | JUMPI => {
                jump_target = stack.pop();
                stack.truncate(n - i.pops as usize);
            }
            _ => {
                let args: Vec<AbsVal> = stack.drain(n - i.pops as usize..).rev().collect();
                if i.pushes == 1 {
                    let consts: Option<Vec<U256>> = args.iter().map(|a| a.as_const()).collect();
                    let v = consts.and_then(|c| fold(i.name, &c)).map_or(AbsVal::Unknown, AbsVal::Const);
                    stack.push(v);
                }
            }
        }
    }
    BlockSim {
        exit: stack,
        jump_target,
        underflow: false,
    }
}

fn join(a: &[AbsVal], b: &[AbsVal]) -> Vec<AbsVal> {
    let n = a.len().min(b.len());
    let (a, b) = (&a[a.len() - n..], &b[b.len() - n..]);
    a.iter()
        .zip(b)
        .map(|(x, y)| if x == y { *x } else { AbsVal::Unknown })
        .collect()
}

const MAX_REVISITS: usize = 2;

pub fn recover_blocks(ops: Vec<EvmOp>) -> EvmCfg {
    let blocks = split_blocks(&ops);
    let mut cfg = EvmCfg {
        entry_stacks: vec![None; blocks.len()],
        blocks,
        ops,
        ..Default::default()
    };
    if cfg.blocks.is_empty() {
        return cfg;
    }
    let mut visits = vec![0usize; cfg.blocks.len()];
    let mut queue = VecDeque::from([0usize]);
    cfg.entry_stacks[0] = Some(Vec::new());
    let jumpdests: BTreeMap<usize, usize> = cfg
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| cfg.ops[b.first].byte == JUMPDEST)
        .map(|(i, b)| (b.start, i))
        .collect();
    while let Some(b) = queue.pop_front() {
        if visits[b] > MAX_REVISITS {
            continue;
        }
        visits[b] += 1;
        let entry = cfg.entry_stacks[b].clone().unwrap_or_default();
        let block = cfg.blocks[b].clone();
        let ops = &cfg.ops[block.first..block.end];
        let sim = simulate(ops, entry);
        if sim.underflow {
            cfg.underflow.insert(b);
            continue;
        }
        let last = ops.last().map(|o| o.byte);
        let mut out: Vec<(Target, EdgeKind)> = Vec::new();
        let resolve = |t: Option<AbsVal>| match t.and_then(AbsVal::as_const) {
            Some(c) if c < U256::from(usize::MAX) => jumpdests
                .get(&c.to::<usize>())
                .map_or(Target::Unresolved, |b| Target::Block(*b)),
            _ => Target::Unresolved,
        };
        match last {
            Some(JUMP) => out.push((resolve(sim.jump_target), EdgeKind::Jump)),
            Some(JUMPI) => {
                out.push((resolve(sim.jump_target), EdgeKind::Taken));
                if b + 1 < cfg.blocks.len() {
                    out.push((Target::Block(b + 1), EdgeKind::Fallthrough));
                }
            }
            Some(x) if ends_block(x) => {}
            _ => {
                if b + 1 < cfg.blocks.len() {
                    out.push((Target::Block(b + 1), EdgeKind::Fallthrough));
                }
            }
        }
        for (dst, kind) in out {
            cfg.edges.insert(EvmEdge { src: b, dst, kind });
            let Target::Block(t) = dst else { continue };
            let joined = match &cfg.entry_stacks[t] {
                None => sim.exit.clone(),
                Some(prev) => {
                    if prev.len() != sim.exit.len() {
                        cfg.height_conflicts.insert(t);
                    }
                    join(prev, &sim.exit)
                }
            };
            if cfg.entry_stacks[t].as_ref() != Some(&joined) || visits[t] == 0 {
                cfg.entry_stacks[t] = Some(joined);
                queue.push_back(t);
            }
        }
    }
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evm::disasm::{decode_hex, disassemble};

    fn cfg(hex: &str) -> EvmCfg {
        recover_blocks(disassemble(&decode_hex(hex).unwrap()).unwrap())
    }

    #[test]
    fn single_jumpi_makes_three_blocks() {
        // PUSH1 1 PUSH1 6 JUMPI STOP JUMPDEST STOP
        let c = cfg("6001600657005b00");
        assert_eq!(c.blocks.len(), 3);
        let edges: Vec<_> = c.edges.iter().map(|e| (e.src, e.dst, e.kind)).collect();
        assert_eq!(
            edges,
            vec![
                (0, Target::Block(1), EdgeKind::Fallthrough),
                (0, Target::Block(2), EdgeKind::Taken),
            ]
        );
    }

    #[test]
    fn push_jump_resolves() {
        // PUSH2 0x0004 JUMP JUMPDEST STOP
        let c = cfg("6100045600");
        assert_eq!(c.edges.iter().next().unwrap().dst, Target::Unresolved);
        let c = cfg("610004565b00");
        assert_eq!(c.succ_blocks(0), vec![1]);
    }

    #[test]
    fn dynamic_jump_is_unresolved() {
        // CALLVALUE JUMP JUMPDEST STOP
        let c = cfg("34565b00");
        assert_eq!(c.edges.iter().next().unwrap().dst, Target::Unresolved);
    }

    #[test]
    fn underflow_is_recorded() {
        let c = cfg("0100");
        assert!(c.underflow.contains(&0));
    }

    #[test]
    fn folds_shifted_selector() {
        assert_eq!(
            fold("SHR", &[U256::from(224), U256::from(0xa9059cbbu64) << 224]),
            Some(U256::from(0xa9059cbbu64))
        );
        assert_eq!(fold("SUB", &[U256::from(1), U256::from(3)]), Some(U256::MAX - U256::from(1)));
    }
}
