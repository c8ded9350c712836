//! Stack code to three-address IR.
//!
//! Each block is simulated on a symbolic stack. Slots a block inherits from
//! its predecessors become per-block entry values; every predecessor assigns
//! the live ones with `PHI` copies just before its terminator. Storage slots
//! built from constants and keccak patterns become state variable references.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use ruint::aliases::U256;

use super::cfg::{fold, recover_blocks, AbsVal, EdgeKind, EvmCfg, Target};
use super::disasm::{disassemble, EvmOp};
use super::dispatch::{identify_functions, single_entry, Dispatch};
use super::opcodes::info;
use super::{format_selector, selector_of, FrontendError};
use crate::diag::{Diagnostic, Stage};
use crate::ir::{
    BasicBlock, BlockLabel, Callee, Contract, Function, InstrId, Instruction, Opcode, Operand, Param, StateKind,
    StateRef, StateVar, ValueId, Visibility, Word,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub name: String,
    pub params: Vec<Param>,
    pub selector: u32,
}

fn split_top_level(list: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in list.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&list[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&list[start..]);
    out
}

fn type_ident(ty: &str) -> String {
    ty.replace("[]", "_arr")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect()
}

/// Parses a canonical signature such as `bid(address,uint256)`.
pub fn parse_signature(sig: &str) -> Option<Signature> {
    let sig = sig.trim();
    let open = sig.find('(')?;
    let name = &sig[..open];
    let inner = sig[open + 1..].strip_suffix(')')?;
    if name.is_empty() || !name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
        return None;
    }
    let params = if inner.trim().is_empty() {
        Vec::new()
    } else {
        split_top_level(inner)
            .into_iter()
            .enumerate()
            .map(|(i, t)| Param {
                name: format!("p{i}"),
                ty: type_ident(t.trim()),
            })
            .collect()
    };
    Some(Signature {
        name: name.to_string(),
        params,
        selector: selector_of(sig),
    })
}

/// Known function signatures by selector.
#[derive(Debug, Clone, Default)]
pub struct SignatureTable {
    by_selector: BTreeMap<u32, Signature>,
}

impl SignatureTable {
    pub fn add(&mut self, sig: &str) -> Option<u32> {
        let s = parse_signature(sig)?;
        let sel = s.selector;
        self.by_selector.entry(sel).or_insert(s);
        Some(sel)
    }

    pub fn get(&self, selector: u32) -> Option<&Signature> {
        self.by_selector.get(&selector)
    }
}

pub struct LiftInput<'a> {
    pub name: &'a str,
    pub address: Option<[u8; 20]>,
    pub signatures: &'a SignatureTable,
    /// Declared names by storage slot.
    pub storage_names: &'a BTreeMap<Word, String>,
}

#[derive(Debug, Clone)]
pub struct Lifted {
    pub contract: Contract,
    pub diagnostics: Vec<Diagnostic>,
    /// SLOAD/SSTORE opcodes in lifted (not unanalyzable) blocks.
    pub storage_ops: usize,
    /// `function.bN` of blocks lifted as a bare STOP after a stack underflow.
    pub unanalyzable: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sym {
    Const(U256),
    Val(ValueId),
    Param(u32),
    /// Inherited stack slot, by position from the bottom.
    Entry(usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Prov {
    Mapping { slot: U256, key: Operand },
    ArrayBase(U256),
    ArrayElem { slot: U256, index: Operand },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct SlotRef {
    kind: StateKind,
    slot: U256,
}

impl SlotRef {
    fn placeholder(self) -> String {
        format!("{}#{}", self.kind, self.slot)
    }
}

const ADDRESS_MASK: U256 = U256::from_limbs([u64::MAX, u64::MAX, 0xffff_ffff, 0]);

/// Address and full-width masks only clean a value; they carry no new data.
fn is_mask(s: &Sym) -> bool {
    matches!(s, Sym::Const(m) if *m == ADDRESS_MASK || *m == U256::MAX)
}

fn ir_opcode(name: &str) -> Option<Opcode> {
    Some(match name {
        "ADD" => Opcode::Add,
        "SUB" => Opcode::Sub,
        "MUL" => Opcode::Mul,
        "DIV" | "SDIV" | "MOD" | "SMOD" | "ADDMOD" | "MULMOD" => Opcode::Div,
        "LT" | "SLT" => Opcode::Lt,
        "GT" | "SGT" => Opcode::Gt,
        "EQ" => Opcode::Eq,
        "ISZERO" => Opcode::IsZero,
        "AND" => Opcode::And,
        "OR" | "XOR" => Opcode::Or,
        "CALLER" | "ORIGIN" => Opcode::Caller,
        "CALLVALUE" => Opcode::CallValue,
        "TIMESTAMP" => Opcode::Timestamp,
        "NUMBER" => Opcode::Number,
        _ => return None,
    })
}

struct BlockOut {
    instrs: Vec<Instruction>,
    term: Instruction,
    exit: Vec<Sym>,
    used: BTreeSet<usize>,
    underflow: bool,
    storage_ops: usize,
}

struct BlockCtx {
    block: usize,
    instrs: Vec<Instruction>,
    used: BTreeSet<usize>,
    mem: BTreeMap<U256, Sym>,
}

struct FnLifter<'a> {
    cfg: &'a EvmCfg,
    input: &'a LiftInput<'a>,
    params: usize,
    next_value: u32,
    entry_vals: HashMap<(usize, usize), ValueId>,
    prov: HashMap<ValueId, Prov>,
    slots: BTreeSet<SlotRef>,
    /// Provenance of inherited slots that all predecessors agree on.
    entry_prov: HashMap<(usize, usize), Prov>,
}

impl FnLifter<'_> {
    fn fresh(&mut self) -> ValueId {
        let v = ValueId(self.next_value);
        self.next_value += 1;
        v
    }

    fn entry_val(&mut self, block: usize, slot: usize) -> ValueId {
        if let Some(v) = self.entry_vals.get(&(block, slot)) {
            return *v;
        }
        let v = self.fresh();
        self.entry_vals.insert((block, slot), v);
        v
    }

    fn operand(&mut self, ctx: &mut BlockCtx, s: Sym) -> Operand {
        match s {
            Sym::Const(c) => Operand::Lit(c),
            Sym::Val(v) => Operand::Value(v),
            Sym::Param(p) => Operand::Param(p),
            Sym::Entry(i) => {
                ctx.used.insert(i);
                Operand::Value(self.entry_val(ctx.block, i))
            }
        }
    }

    fn emit(&mut self, ctx: &mut BlockCtx, opcode: Opcode, args: &[Sym]) -> ValueId {
        let ops: Vec<Operand> = args.iter().take(3).map(|a| self.operand(ctx, *a)).collect();
        let v = self.fresh();
        ctx.instrs.push(Instruction::new(opcode).with_result(v).with_operands(ops));
        v
    }

    fn emit_void(&mut self, ctx: &mut BlockCtx, opcode: Opcode, args: &[Sym]) {
        let ops: Vec<Operand> = args.iter().take(3).map(|a| self.operand(ctx, *a)).collect();
        ctx.instrs.push(Instruction::new(opcode).with_operands(ops));
    }

    fn mem_store(&mut self, ctx: &mut BlockCtx, off: Sym, val: Sym, width: u64) {
        match off {
            Sym::Const(o) => {
                let lo = o.saturating_sub(U256::from(31));
                let hi = o.saturating_add(U256::from(width - 1));
                // A constant word whose set bytes all precede `o` survives.
                let stale: Vec<U256> = ctx
                    .mem
                    .range(lo..=hi)
                    .filter(|(k, v)| match v {
                        Sym::Const(c) if **k < o => (*c << (8 * (o - **k).to::<usize>())) != U256::ZERO,
                        _ => true,
                    })
                    .map(|(k, _)| *k)
                    .collect();
                for k in stale {
                    ctx.mem.remove(&k);
                }
                if width == 32 {
                    ctx.mem.insert(o, val);
                }
            }
            _ => ctx.mem.clear(),
        }
        if !matches!(val, Sym::Const(_)) {
            self.emit_void(ctx, Opcode::Mstore, &[off, val]);
        }
    }

    fn mem_load(&mut self, ctx: &mut BlockCtx, off: Sym) -> Sym {
        if let Sym::Const(o) = off {
            if let Some(s) = ctx.mem.get(&o) {
                return *s;
            }
        }
        Sym::Val(self.emit(ctx, Opcode::Mload, &[off]))
    }

    fn clear_region(ctx: &mut BlockCtx, dst: Sym) {
        match dst {
            Sym::Const(o) => {
                let lo = o.saturating_sub(U256::from(31));
                let stale: Vec<U256> = ctx.mem.range(lo..).map(|(k, _)| *k).collect();
                for k in stale {
                    ctx.mem.remove(&k);
                }
            }
            _ => ctx.mem.clear(),
        }
    }

    fn prov_of(&self, block: usize, s: Sym) -> Option<&Prov> {
        match s {
            Sym::Val(v) => self.prov.get(&v),
            Sym::Entry(i) => self.entry_prov.get(&(block, i)),
            _ => None,
        }
    }

    fn storage_ref(&mut self, block: usize, addr: Sym) -> Option<StateRef> {
        let (kind, slot, key) = match addr {
            Sym::Const(s) => (StateKind::Scalar, s, None),
            _ => match self.prov_of(block, addr)?.clone() {
                Prov::Mapping { slot, key } => (StateKind::Mapping, slot, Some(key)),
                Prov::ArrayElem { slot, index } => (StateKind::Array, slot, Some(index)),
                Prov::ArrayBase(slot) => (StateKind::Array, slot, Some(Operand::Lit(U256::ZERO))),
            },
        };
        let r = SlotRef { kind, slot };
        self.slots.insert(r);
        Some(StateRef {
            var: r.placeholder(),
            key,
        })
    }

    fn sha3(&mut self, ctx: &mut BlockCtx, off: Sym, len: Sym) -> Sym {
        let (Sym::Const(o), Sym::Const(l)) = (off, len) else {
            let m = self.mem_load(ctx, off);
            return Sym::Val(self.emit(ctx, Opcode::Sha3, &[m]));
        };
        let words = l.saturating_add(U256::from(31)) / U256::from(32);
        let n = words.min(U256::from(3)).to::<usize>();
        let syms: Vec<Sym> = (0..n)
            .map(|k| self.mem_load(ctx, Sym::Const(o.saturating_add(U256::from(32 * k)))))
            .collect();
        let prov = if l == U256::from(64) {
            let base = match syms[1] {
                Sym::Const(s) => Some(s),
                s => match self.prov_of(ctx.block, s) {
                    Some(Prov::Mapping { slot, .. }) => Some(*slot),
                    _ => None,
                },
            };
            base.map(|slot| Prov::Mapping {
                slot,
                key: self.operand(ctx, syms[0]),
            })
        } else if l == U256::from(32) {
            match syms[0] {
                Sym::Const(s) => Some(Prov::ArrayBase(s)),
                _ => None,
            }
        } else {
            None
        };
        let v = self.emit(ctx, Opcode::Sha3, &syms);
        if let Some(p) = prov {
            self.prov.insert(v, p);
        }
        Sym::Val(v)
    }

    fn call(&mut self, ctx: &mut BlockCtx, name: &str, args: &[Sym]) -> Sym {
        let has_value = matches!(name, "CALL" | "CALLCODE");
        let addr = args[1];
        let value = has_value.then_some(args[2]);
        let rest = if has_value { &args[3..] } else { &args[2..] };
        let (aoff, alen, roff) = (rest[0], rest[1], rest[2]);
        let function = match aoff {
            Sym::Const(a) => match ctx.mem.get(&a) {
                Some(Sym::Const(w)) if (*w << 32usize) == U256::ZERO && !w.is_zero() => {
                    let sel = (*w >> 224usize).to::<u32>();
                    Some(
                        self.input
                            .signatures
                            .get(sel)
                            .map_or_else(|| format_selector(sel), |s| s.name.clone()),
                    )
                }
                _ => None,
            },
            _ => None,
        };
        let with_value = value.filter(|v| *v != Sym::Const(U256::ZERO));
        let budget = 3 - usize::from(with_value.is_some());
        let mut operands: Vec<Sym> = with_value.into_iter().collect();
        match (aoff, alen) {
            (Sym::Const(a), Sym::Const(l)) => {
                let words = l.saturating_sub(U256::from(4)).saturating_add(U256::from(31)) / U256::from(32);
                let n = words.min(U256::from(budget)).to::<usize>();
                for k in 0..n {
                    let s = self.mem_load(ctx, Sym::Const(a.saturating_add(U256::from(4 + 32 * k))));
                    operands.push(s);
                }
            }
            _ => {
                let s = self.mem_load(ctx, aoff);
                operands.push(s);
            }
        }
        let opcode = match name {
            "STATICCALL" => Opcode::StaticCall,
            "DELEGATECALL" => Opcode::DelegateCall,
            _ if with_value.is_some() => Opcode::CallValueCall,
            _ => Opcode::Call,
        };
        let address = self.operand(ctx, addr);
        let v = self.emit(ctx, opcode, &operands);
        ctx.instrs.last_mut().expect("call emitted").callee = Some(Callee::Dynamic { address, function });
        ctx.mem.clear();
        if let Sym::Const(r) = roff {
            ctx.mem.insert(r, Sym::Val(v));
        }
        Sym::Val(v)
    }

    fn lift_block(&mut self, b: usize) -> BlockOut {
        let entry = self.cfg.entry_stacks[b].clone().unwrap_or_default();
        let mut stack: Vec<Sym> = entry
            .iter()
            .enumerate()
            .map(|(i, a)| match a {
                AbsVal::Const(c) => Sym::Const(*c),
                AbsVal::Unknown => Sym::Entry(i),
            })
            .collect();
        let mut ctx = BlockCtx {
            block: b,
            instrs: Vec::new(),
            used: BTreeSet::new(),
            mem: BTreeMap::new(),
        };
        let mut storage_ops = 0;
        let mut term = None;
        let ops: &[EvmOp] = self.cfg.ops_of(b);
        for op in ops {
            let Some(inf) = info(op.byte) else {
                term = Some(Instruction::new(Opcode::Revert));
                break;
            };
            let pops = inf.pops as usize;
            if stack.len() < pops {
                return BlockOut {
                    instrs: Vec::new(),
                    term: Instruction::new(Opcode::Stop),
                    exit: Vec::new(),
                    used: BTreeSet::new(),
                    underflow: true,
                    storage_ops: 0,
                };
            }
            let n = stack.len();
            match op.byte {
                0x5f..=0x7f => {
                    stack.push(Sym::Const(op.push_value().unwrap_or_default()));
                    continue;
                }
                0x80..=0x8f => {
                    stack.push(stack[n - pops]);
                    continue;
                }
                0x90..=0x9f => {
                    stack.swap(n - 1, n - pops);
                    continue;
                }
                _ => {}
            }
            let args: Vec<Sym> = stack.drain(n - pops..).rev().collect();
            let name = inf.name;
            let pushed: Option<Sym> = match name {
                "JUMPDEST" | "POP" | "TSTORE" => None,
                _ if name.starts_with("LOG") => None,
                "JUMP" => {
                    term = Some(Instruction::new(Opcode::Jump));
                    break;
                }
                "JUMPI" => {
                    let cond = self.operand(&mut ctx, args[1]);
                    term = Some(Instruction::new(Opcode::JumpI).with_operands([cond]));
                    break;
                }
                "STOP" | "SELFDESTRUCT" => {
                    term = Some(Instruction::new(Opcode::Stop));
                    break;
                }
                "REVERT" | "INVALID" => {
                    term = Some(Instruction::new(Opcode::Revert));
                    break;
                }
                "RETURN" => {
                    let v = self.mem_load(&mut ctx, args[0]);
                    let v = self.operand(&mut ctx, v);
                    term = Some(Instruction::new(Opcode::Return).with_operands([v]));
                    break;
                }
                "PC" => Some(Sym::Const(U256::from(op.offset))),
                "SHA3" => Some(self.sha3(&mut ctx, args[0], args[1])),
                "SLOAD" => {
                    storage_ops += 1;
                    let v = match self.storage_ref(b, args[0]) {
                        Some(r) => {
                            let v = self.fresh();
                            let mut i = Instruction::new(Opcode::Sload).with_result(v);
                            i.state_ref = Some(r);
                            ctx.instrs.push(i);
                            v
                        }
                        None => self.emit(&mut ctx, Opcode::Sload, &args[..1]),
                    };
                    Some(Sym::Val(v))
                }
                "SSTORE" => {
                    storage_ops += 1;
                    match self.storage_ref(b, args[0]) {
                        Some(r) => {
                            let val = self.operand(&mut ctx, args[1]);
                            let mut i = Instruction::new(Opcode::Sstore).with_operands([val]);
                            i.state_ref = Some(r);
                            ctx.instrs.push(i);
                        }
                        None => self.emit_void(&mut ctx, Opcode::Sstore, &args),
                    }
                    None
                }
                "MLOAD" => Some(self.mem_load(&mut ctx, args[0])),
                "MSTORE" => {
                    self.mem_store(&mut ctx, args[0], args[1], 32);
                    None
                }
                "MSTORE8" => {
                    self.mem_store(&mut ctx, args[0], args[1], 1);
                    None
                }
                "CALLDATALOAD" => Some(match args[0] {
                    Sym::Const(o)
                        if o >= U256::from(4)
                            && (o - U256::from(4)) % U256::from(32) == U256::ZERO
                            && (o - U256::from(4)) / U256::from(32) < U256::from(self.params) =>
                    {
                        Sym::Param(((o - U256::from(4)) / U256::from(32)).to::<u32>())
                    }
                    a => Sym::Val(self.emit(&mut ctx, Opcode::CallDataLoad, &[a])),
                }),
                "CALLDATACOPY" => {
                    let v = self.emit(&mut ctx, Opcode::CallDataLoad, &args[1..2]);
                    self.mem_store(&mut ctx, args[0], Sym::Val(v), 32);
                    None
                }
                "RETURNDATACOPY" => {
                    let v = self.emit(&mut ctx, Opcode::And, &[]);
                    self.mem_store(&mut ctx, args[0], Sym::Val(v), 32);
                    None
                }
                "MCOPY" => {
                    let src = match args[1] {
                        Sym::Const(s) => ctx.mem.get(&s).copied(),
                        _ => None,
                    };
                    match src {
                        Some(s) => self.mem_store(&mut ctx, args[0], s, 32),
                        None => Self::clear_region(&mut ctx, args[0]),
                    }
                    None
                }
                "CODECOPY" => {
                    Self::clear_region(&mut ctx, args[0]);
                    None
                }
                "EXTCODECOPY" => {
                    Self::clear_region(&mut ctx, args[1]);
                    None
                }
                "CALL" | "CALLCODE" | "STATICCALL" | "DELEGATECALL" => Some(self.call(&mut ctx, name, &args)),
                "AND" if args.iter().any(is_mask) && !args.iter().all(|a| matches!(a, Sym::Const(_))) => {
                    Some(if is_mask(&args[0]) { args[1] } else { args[0] })
                }
                _ => {
                    let consts: Option<Vec<U256>> = args
                        .iter()
                        .map(|a| match a {
                            Sym::Const(c) => Some(*c),
                            _ => None,
                        })
                        .collect();
                    match consts.and_then(|c| fold(name, &c)) {
                        Some(c) => Some(Sym::Const(c)),
                        _ => {
                            let opcode = ir_opcode(name).unwrap_or(Opcode::And);
                            let v = self.emit(&mut ctx, opcode, &args);
                            if opcode == Opcode::Add {
                                let base = args.iter().enumerate().find_map(|(i, a)| match self.prov_of(b, *a) {
                                    Some(Prov::ArrayBase(s)) => Some((i, *s)),
                                    _ => None,
                                });
                                if let Some((i, slot)) = base {
                                    let index = self.operand(&mut ctx, args[1 - i]);
                                    self.prov.insert(v, Prov::ArrayElem { slot, index });
                                }
                            }
                            (inf.pushes == 1).then_some(Sym::Val(v))
                        }
                    }
                }
            };
            if let Some(p) = pushed {
                stack.push(p);
            }
        }
        BlockOut {
            instrs: ctx.instrs,
            term: term.unwrap_or_else(|| Instruction::new(Opcode::Jump)),
            exit: stack,
            used: ctx.used,
            underflow: false,
            storage_ops,
        }
    }
}

fn function_blocks(cfg: &EvmCfg, dispatch: &Dispatch, entry: usize) -> Vec<usize> {
    let stop: BTreeSet<usize> = dispatch
        .entries
        .iter()
        .map(|e| e.entry_block)
        .filter(|b| *b != entry)
        .chain(dispatch.dispatcher_blocks.iter().copied())
        .collect();
    let mut seen = BTreeSet::from([entry]);
    let mut queue = VecDeque::from([entry]);
    while let Some(b) = queue.pop_front() {
        for s in cfg.succ_blocks(b) {
            if !stop.contains(&s) && seen.insert(s) {
                queue.push_back(s);
            }
        }
    }
    let mut order: Vec<usize> = seen.into_iter().filter(|b| *b != entry).collect();
    order.sort_by_key(|b| cfg.blocks[*b].start);
    order.insert(0, entry);
    order
}

struct LiftedFn {
    function: Function,
    slots: BTreeSet<SlotRef>,
    storage_ops: usize,
    underflow: Vec<(BlockLabel, usize)>,
    unresolved: Vec<usize>,
}

fn lift_function(
    cfg: &EvmCfg,
    dispatch: &Dispatch,
    input: &LiftInput<'_>,
    entry: usize,
    name: String,
    params: Vec<Param>,
) -> LiftedFn {
    let blocks = function_blocks(cfg, dispatch, entry);
    let labels: HashMap<usize, BlockLabel> = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (*b, BlockLabel(i as u32)))
        .collect();
    let sink = BlockLabel(blocks.len() as u32);
    let height = |b: usize| cfg.entry_stacks[b].as_ref().map_or(0, Vec::len);
    let index: HashMap<usize, usize> = blocks.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let mut entry_prov = HashMap::new();
    let mut rounds = 0;
    let (mut lifter, outs, succs) = loop {
        let mut lifter = FnLifter {
            cfg,
            input,
            params: params.len(),
            next_value: 0,
            entry_vals: HashMap::new(),
            prov: HashMap::new(),
            slots: BTreeSet::new(),
            entry_prov: entry_prov.clone(),
        };
        let outs: Vec<BlockOut> = blocks.iter().map(|b| lifter.lift_block(*b)).collect();
        let succs: Vec<Vec<usize>> = blocks
            .iter()
            .zip(&outs)
            .map(|(b, o)| {
                if o.underflow {
                    return Vec::new();
                }
                cfg.succ_blocks(*b).into_iter().filter(|s| labels.contains_key(s)).collect()
            })
            .collect();
        let mut incoming: HashMap<(usize, usize), Vec<Option<Prov>>> = HashMap::new();
        for (i, b) in blocks.iter().enumerate() {
            for s in &succs[i] {
                let exit = &outs[i].exit;
                for j in 0..height(*s) {
                    let at = exit.len() as isize - height(*s) as isize + j as isize;
                    let p = (at >= 0)
                        .then(|| exit.get(at as usize))
                        .flatten()
                        .and_then(|sym| lifter.prov_of(*b, *sym).cloned());
                    incoming.entry((*s, j)).or_default().push(p);
                }
            }
        }
        let next: HashMap<(usize, usize), Prov> = incoming
            .into_iter()
            .filter(|((s, _), _)| *s != entry)
            .filter_map(|(k, ps)| {
                let first = ps[0].clone()?;
                ps.iter().all(|p| p.as_ref() == Some(&first)).then_some((k, first))
            })
            .collect();
        rounds += 1;
        if next == entry_prov || rounds == 4 {
            break (lifter, outs, succs);
        }
        entry_prov = next;
    };
    let mut live: Vec<BTreeSet<usize>> = outs.iter().map(|o| o.used.clone()).collect();
    loop {
        let mut changed = false;
        for i in 0..blocks.len() {
            for s in &succs[i] {
                let hs = height(*s) as isize;
                let exit = &outs[i].exit;
                for j in live[index[s]].clone() {
                    let at = exit.len() as isize - hs + j as isize;
                    if at >= 0 {
                        if let Some(Sym::Entry(k)) = exit.get(at as usize) {
                            changed |= live[i].insert(*k);
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut unresolved = Vec::new();
    let mut needs_sink = false;
    let mut ir_blocks = Vec::new();
    let mut storage_ops = 0;
    let mut underflow = Vec::new();
    for (i, (b, out)) in blocks.iter().zip(outs).enumerate() {
        let label = labels[b];
        if out.underflow {
            underflow.push((label, cfg.blocks[*b].start));
            ir_blocks.push(BasicBlock {
                label,
                instructions: vec![out.term],
            });
            continue;
        }
        storage_ops += out.storage_ops;
        let mut instrs = Vec::new();
        if i == 0 {
            for k in &live[0] {
                let v = lifter.entry_val(*b, *k);
                instrs.push(Instruction::new(Opcode::And).with_result(v));
            }
        }
        instrs.extend(out.instrs);
        for s in &succs[i] {
            let hs = height(*s);
            for j in live[index[s]].clone() {
                let dst = lifter.entry_val(*s, j);
                let at = out.exit.len() as isize - hs as isize + j as isize;
                let src = (at >= 0).then(|| out.exit.get(at as usize).copied()).flatten();
                let inst = match src {
                    None => Instruction::new(Opcode::And),
                    Some(Sym::Const(c)) => Instruction::new(Opcode::Const).with_operands([Operand::Lit(c)]),
                    Some(Sym::Val(v)) => Instruction::new(Opcode::Phi).with_operands([Operand::Value(v)]),
                    Some(Sym::Param(p)) => Instruction::new(Opcode::Phi).with_operands([Operand::Param(p)]),
                    Some(Sym::Entry(k)) => {
                        let v = lifter.entry_val(*b, k);
                        Instruction::new(Opcode::Phi).with_operands([Operand::Value(v)])
                    }
                };
                instrs.push(inst.with_result(dst));
            }
        }
        let mut term = out.term;
        let target = |kind: EdgeKind| {
            cfg.successors(*b).find(|e| e.kind == kind).map(|e| match e.dst {
                Target::Block(t) => labels.get(&t).copied(),
                Target::Unresolved => None,
            })
        };
        let mut resolve = |t: Option<Option<BlockLabel>>| match t.flatten() {
            Some(l) => l,
            None => {
                needs_sink = true;
                sink
            }
        };
        match term.opcode {
            Opcode::Jump if cfg.ops_of(*b).last().is_some_and(|o| o.name == "JUMP") => {
                let t = target(EdgeKind::Jump);
                if matches!(t, Some(None)) && cfg.successors(*b).any(|e| e.dst == Target::Unresolved) {
                    unresolved.push(cfg.ops_of(*b).last().map_or(0, |o| o.offset));
                }
                term.targets = vec![resolve(t)];
            }
            Opcode::Jump => term.targets = vec![resolve(target(EdgeKind::Fallthrough))],
            Opcode::JumpI => {
                let taken = target(EdgeKind::Taken);
                if cfg.successors(*b).any(|e| e.dst == Target::Unresolved) {
                    unresolved.push(cfg.ops_of(*b).last().map_or(0, |o| o.offset));
                }
                term.targets = vec![resolve(taken), resolve(target(EdgeKind::Fallthrough))];
            }
            _ => {}
        }
        instrs.push(term);
        ir_blocks.push(BasicBlock {
            label,
            instructions: instrs,
        });
    }
    if needs_sink {
        ir_blocks.push(BasicBlock {
            label: sink,
            instructions: vec![Instruction::new(Opcode::Stop)],
        });
    }
    let mut next = 0;
    for blk in &mut ir_blocks {
        for i in &mut blk.instructions {
            i.id = InstrId(next);
            next += 1;
        }
    }
    LiftedFn {
        slots: lifter.slots,
        function: Function {
            name,
            visibility: Visibility::Public,
            params,
            entry: BlockLabel(0),
            blocks: ir_blocks,
        },
        storage_ops,
        underflow,
        unresolved,
    }
}

fn state_vars(slots: &BTreeSet<SlotRef>, names: &BTreeMap<Word, String>) -> BTreeMap<String, StateVar> {
    let arrays: BTreeSet<U256> = slots
        .iter()
        .filter(|s| s.kind == StateKind::Array)
        .map(|s| s.slot)
        .collect();
    let mut out = BTreeMap::new();
    for s in slots {
        let shares_slot = slots.iter().filter(|o| o.slot == s.slot).count() > 1;
        let folded = s.kind == StateKind::Scalar && arrays.contains(&s.slot);
        let kind = if folded { StateKind::Array } else { s.kind };
        let name = match names.get(&s.slot) {
            Some(n) if shares_slot && !folded && !(s.kind == StateKind::Array) => format!("{n}_{}", s.kind),
            Some(n) => n.clone(),
            None => match kind {
                StateKind::Scalar => format!("slot_{}", s.slot),
                StateKind::Mapping => format!("map_{}", s.slot),
                StateKind::Array => format!("arr_{}", s.slot),
            },
        };
        out.insert(
            s.placeholder(),
            StateVar {
                name,
                slot: s.slot,
                kind,
                label: None,
            },
        );
    }
    out
}

/// Lifts every dispatch entry of one contract to a public IR function.
pub fn lift_to_ir(cfg: &EvmCfg, dispatch: &Dispatch, input: &LiftInput<'_>) -> Lifted {
    let mut slots = BTreeSet::new();
    let mut functions = Vec::new();
    let mut diagnostics = Vec::new();
    let mut storage_ops = 0;
    let mut unanalyzable = Vec::new();
    let mut names = BTreeSet::new();
    for e in &dispatch.entries {
        let sig = e.selector.and_then(|s| input.signatures.get(s));
        let mut name = sig.map_or_else(|| e.function_name.clone(), |s| s.name.clone());
        if !names.insert(name.clone()) {
            name = e.selector.map_or(format!("{name}_{}", e.entry_block), format_selector);
            names.insert(name.clone());
        }
        let params = sig.map(|s| s.params.clone()).unwrap_or_default();
        let f = lift_function(cfg, dispatch, input, e.entry_block, name, params);
        slots.extend(f.slots.iter().copied());
        storage_ops += f.storage_ops;
        for (label, offset) in &f.underflow {
            let at = format!("{}.{}", f.function.name, label);
            diagnostics.push(Diagnostic::warning(
                Stage::Frontend,
                format!(
                    "StackUnderflow({}.{at}) at 0x{offset:x}: block lifted as STOP and left out of analysis",
                    input.name
                ),
            ));
            unanalyzable.push(at);
        }
        for offset in &f.unresolved {
            diagnostics.push(Diagnostic::info(
                Stage::Frontend,
                format!(
                    "UnresolvedJump in {}.{} at 0x{offset:x}: target routed to a sink block",
                    input.name, f.function.name
                ),
            ));
        }
        functions.push(f.function);
    }
    let vars = state_vars(&slots, input.storage_names);
    for f in &mut functions {
        for b in &mut f.blocks {
            for i in &mut b.instructions {
                if let Some(r) = &mut i.state_ref {
                    let v = &vars[&r.var];
                    if r.var.starts_with("scalar#") && v.kind == StateKind::Array {
                        r.key = None;
                    }
                    r.var = v.name.clone();
                }
            }
        }
    }
    let mut state: Vec<StateVar> = Vec::new();
    for v in vars.into_values() {
        if !state.iter().any(|s| s.name == v.name) {
            state.push(v);
        }
    }
    state.sort_by(|a, b| (a.slot, a.kind, &a.name).cmp(&(b.slot, b.kind, &b.name)));
    functions.sort_by(|a, b| a.name.cmp(&b.name));
    Lifted {
        contract: Contract {
            name: input.name.to_string(),
            address: input.address,
            state_vars: state,
            functions,
        },
        diagnostics,
        storage_ops,
        unanalyzable,
    }
}

/// Disassembles, recovers blocks and dispatch, and lifts one contract.
pub fn lift_bytecode(code: &[u8], input: &LiftInput<'_>) -> Result<Lifted, FrontendError> {
    let ops = disassemble(code)?;
    let truncated: Vec<usize> = ops.iter().filter(|o| o.truncated).map(|o| o.offset).collect();
    let cfg = recover_blocks(ops);
    let mut diags = Vec::new();
    for off in truncated {
        diags.push(Diagnostic::info(
            Stage::Frontend,
            format!("TruncatedPush in {} at 0x{off:x}: immediate padded with zeros", input.name),
        ));
    }
    for b in &cfg.height_conflicts {
        diags.push(Diagnostic::warning(
            Stage::Frontend,
            format!(
                "StackHeightConflict in {} at 0x{:x}: predecessors disagree on stack height",
                input.name, cfg.blocks[*b].start
            ),
        ));
    }
    let dispatch = match identify_functions(&cfg) {
        Ok(d) => d,
        Err(e) => {
            diags.push(Diagnostic::info(
                Stage::Frontend,
                format!("{e} in {}; lifted as a single function", input.name),
            ));
            single_entry()
        }
    };
    let mut lifted = lift_to_ir(&cfg, &dispatch, input);
    diags.append(&mut lifted.diagnostics);
    lifted.diagnostics = diags;
    Ok(lifted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evm::assemble;
    use crate::ir::{format_instruction, parse_ir, serialize_ir, validate, Universe};

    fn lift(src: &str, sigs: &[&str], names: &[(u64, &str)]) -> Lifted {
        let mut table = SignatureTable::default();
        for s in sigs {
            table.add(s).unwrap();
        }
        let names: BTreeMap<Word, String> = names.iter().map(|(s, n)| (Word::from(*s), n.to_string())).collect();
        let input = LiftInput {
            name: "C",
            address: None,
            signatures: &table,
            storage_names: &names,
        };
        lift_bytecode(&assemble(src).unwrap(), &input).unwrap()
    }

    fn listing(l: &Lifted, func: &str) -> Vec<String> {
        let f = l.contract.function(func).unwrap();
        f.blocks
            .iter()
            .flat_map(|b| b.instructions.iter().map(|i| format_instruction(i, f)))
            .collect()
    }

    fn round_trips(l: &Lifted) {
        let u = Universe::new(vec![l.contract.clone()]);
        assert_eq!(validate(&u), vec![]);
        let text = serialize_ir(&u);
        assert_eq!(parse_ir(&text).unwrap(), u, "{text}");
    }

    #[test]
    fn constant_slot_is_scalar() {
        let l = lift("PUSH1 0x00\nSLOAD\nPOP\nSTOP", &[], &[]);
        assert_eq!(listing(&l, "fallback"), ["v0 = SLOAD $slot_0", "STOP"]);
        assert_eq!(l.contract.state_vars[0].kind, StateKind::Scalar);
        assert!(l.diagnostics[0].message.starts_with("NoDispatcher"));
        round_trips(&l);
    }

    #[test]
    fn keccak_key_slot_is_mapping_on_base_slot() {
        // balances[caller] at slot 1: keccak256(key . 1)
        let src = "
            CALLER
            PUSH1 0x00
            MSTORE
            PUSH1 0x01
            PUSH1 0x20
            MSTORE
            PUSH1 0x40
            PUSH1 0x00
            SHA3
            SLOAD
            CALLVALUE
            ADD
            CALLER
            PUSH1 0x00
            MSTORE
            PUSH1 0x01
            PUSH1 0x20
            MSTORE
            PUSH1 0x40
            PUSH1 0x00
            SHA3
            SSTORE
            STOP
        ";
        let l = lift(src, &[], &[(1, "balances")]);
        let vars = &l.contract.state_vars;
        assert_eq!(vars.len(), 1);
        assert_eq!((vars[0].name.as_str(), vars[0].kind, vars[0].slot), ("balances", StateKind::Mapping, Word::from(1)));
        let text = listing(&l, "fallback");
        assert!(text.contains(&"v2 = SLOAD $balances[v0]".to_string()), "{text:?}");
        assert!(text.iter().any(|t| t.starts_with("SSTORE $balances[v")), "{text:?}");
        round_trips(&l);
    }

    #[test]
    fn array_length_and_element_share_a_var() {
        let src = "
            PUSH1 0x02
            SLOAD
            PUSH1 0x02
            PUSH1 0x00
            MSTORE
            PUSH1 0x20
            PUSH1 0x00
            SHA3
            ADD
            SLOAD
            POP
            STOP
        ";
        let l = lift(src, &[], &[]);
        assert_eq!(l.contract.state_vars.len(), 1);
        assert_eq!(l.contract.state_vars[0].kind, StateKind::Array);
        let text = listing(&l, "fallback");
        assert_eq!(text[0], "v0 = SLOAD $arr_2");
        assert!(text.iter().any(|t| t.ends_with("= SLOAD $arr_2[v0]")), "{text:?}");
    }

    const STORE: &str = "
            PUSH1 0x00
            CALLDATALOAD
            PUSH1 0xe0
            SHR
            DUP1
            PUSH4 @sel(set(uint256))
            EQ
            PUSH2 @set
            JUMPI
            PUSH1 0x00
            DUP1
            REVERT
        set:
            PUSH1 0x04
            CALLDATALOAD
            PUSH2 @check
            JUMP
        check:
            DUP1
            TIMESTAMP
            GT
            PUSH2 @ok
            JUMPI
            PUSH1 0x00
            DUP1
            REVERT
        ok:
            PUSH1 0x00
            SSTORE
            STOP
    ";

    #[test]
    fn params_and_carried_stack_slots() {
        let l = lift(STORE, &["set(uint256)"], &[(0, "deadline")]);
        let f = l.contract.function("set").unwrap();
        assert_eq!(f.params.len(), 1);
        let text = listing(&l, "set");
        assert!(text.contains(&"v1 = PHI %p0".to_string()), "{text:?}");
        assert!(text.iter().any(|t| t.starts_with("SSTORE $deadline v")), "{text:?}");
        assert_eq!(l.storage_ops, 1);
        round_trips(&l);
    }

    #[test]
    fn unresolved_jump_goes_to_sink() {
        let l = lift("CALLVALUE\nJUMP\nx:\nSTOP", &[], &[]);
        let f = l.contract.function("fallback").unwrap();
        let last = f.blocks.last().unwrap();
        assert_eq!(last.instructions.len(), 1);
        assert_eq!(last.instructions[0].opcode, Opcode::Stop);
        assert!(l.diagnostics.iter().any(|d| d.message.starts_with("UnresolvedJump")));
        round_trips(&l);
    }

    #[test]
    fn underflow_block_is_unanalyzable() {
        let l = lift("ADD\nSTOP", &[], &[]);
        assert_eq!(l.unanalyzable, ["fallback.b0"]);
        assert!(l.diagnostics.iter().any(|d| d.message.starts_with("StackUnderflow(C.fallback.b0)")));
    }

    #[test]
    fn value_call_names_the_callee() {
        let src = "
            PUSH4 @sel(deposit(address))
            PUSH1 0xe0
            SHL
            PUSH1 0x00
            MSTORE
            CALLER
            PUSH1 0x04
            MSTORE
            PUSH1 0x00
            PUSH1 0x00
            PUSH1 0x24
            PUSH1 0x00
            CALLVALUE
            PUSH1 0x03
            SLOAD
            PUSH20 0xffffffffffffffffffffffffffffffffffffffff
            AND
            GAS
            CALL
            POP
            STOP
        ";
        let l = lift(src, &["deposit(address)"], &[(3, "bank")]);
        let text = listing(&l, "fallback");
        assert!(text.iter().any(|t| t.contains("CALLVALUECALL")), "{text:?}");
        let call = l.contract.functions[0].blocks[0]
            .instructions
            .iter()
            .find(|i| i.opcode == Opcode::CallValueCall)
            .unwrap();
        assert!(matches!(&call.callee, Some(Callee::Dynamic { function: Some(n), .. }) if n == "deposit"));
        round_trips(&l);
    }
}
