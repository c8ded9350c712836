//! Public function entries from the selector dispatcher.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::cfg::{EdgeKind, EvmCfg, Target};
use super::opcodes::JUMPI;
use super::{format_selector, FrontendError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchEntry {
    /// `None` for the fallback path.
    pub selector: Option<u32>,
    pub entry_block: usize,
    pub function_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dispatch {
    pub entries: Vec<DispatchEntry>,
    /// Blocks of the dispatcher itself, owned by no function.
    pub dispatcher_blocks: BTreeSet<usize>,
}

pub const FALLBACK: &str = "fallback";

/// The whole contract as one function entered at block 0.
pub fn single_entry() -> Dispatch {
    Dispatch {
        entries: vec![DispatchEntry {
            selector: None,
            entry_block: 0,
            function_name: FALLBACK.into(),
        }],
        dispatcher_blocks: BTreeSet::new(),
    }
}

/// Selector compared by a block ending in JUMPI: `PUSHn sel EQ` or
/// `PUSHn sel DUPk EQ` with n ≤ 4.
fn selector_compare(cfg: &EvmCfg, b: usize) -> Option<u32> {
    let ops = cfg.ops_of(b);
    if ops.last()?.byte != JUMPI {
        return None;
    }
    (0..ops.len()).find_map(|k| {
        let push = &ops[k];
        if !(0x60..=0x63).contains(&push.byte) {
            return None;
        }
        let name = |d: usize| ops.get(k + d).map(|o| o.name);
        let eq = name(1) == Some("EQ") || (name(1).is_some_and(|n| n.starts_with("DUP")) && name(2) == Some("EQ"));
        eq.then(|| push.push_value().map(|v| v.to::<u32>())).flatten()
    })
}

fn edge(cfg: &EvmCfg, b: usize, kind: EdgeKind) -> Option<usize> {
    cfg.successors(b).find_map(|e| match (e.kind == kind, e.dst) {
        (true, Target::Block(t)) => Some(t),
        _ => None,
    })
}

pub fn identify_functions(cfg: &EvmCfg) -> Result<Dispatch, FrontendError> {
    if cfg.blocks.is_empty() {
        return Err(FrontendError::NoDispatcher);
    }
    let mut entries: BTreeMap<u32, usize> = BTreeMap::new();
    let mut order = Vec::new();
    let mut last_compare = None;
    let mut seen = BTreeSet::from([0usize]);
    let mut queue = VecDeque::from([0usize]);
    while let Some(b) = queue.pop_front() {
        let next: Vec<usize> = match selector_compare(cfg, b) {
            Some(sel) => {
                if let Some(t) = edge(cfg, b, EdgeKind::Taken) {
                    if let Entry::Vacant(e) = entries.entry(sel) {
                        e.insert(t);
                        order.push(sel);
                    }
                }
                if last_compare.is_none_or(|l| l < b) {
                    last_compare = Some(b);
                }
                edge(cfg, b, EdgeKind::Fallthrough).into_iter().collect()
            }
            None => cfg.succ_blocks(b),
        };
        for n in next {
            if seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    if entries.is_empty() {
        return Err(FrontendError::NoDispatcher);
    }
    let fallback = last_compare
        .and_then(|b| edge(cfg, b, EdgeKind::Fallthrough))
        .filter(|f| selector_compare(cfg, *f).is_none());

    let stops: BTreeSet<usize> = entries.values().copied().chain(fallback).collect();
    let mut region = BTreeSet::from([0usize]);
    let mut queue = VecDeque::from([0usize]);
    while let Some(b) = queue.pop_front() {
        let next = match selector_compare(cfg, b) {
            Some(_) => edge(cfg, b, EdgeKind::Fallthrough).into_iter().collect(),
            None => cfg.succ_blocks(b),
        };
        for n in next {
            if !stops.contains(&n) && region.insert(n) {
                queue.push_back(n);
            }
        }
    }
    let reads_calldata = region
        .iter()
        .any(|b| cfg.ops_of(*b).iter().any(|o| o.name == "CALLDATALOAD"));
    if !reads_calldata {
        return Err(FrontendError::NoDispatcher);
    }

    let mut out: Vec<DispatchEntry> = order
        .iter()
        .map(|sel| DispatchEntry {
            selector: Some(*sel),
            entry_block: entries[sel],
            function_name: format_selector(*sel),
        })
        .collect();
    if let Some(f) = fallback {
        out.push(DispatchEntry {
            selector: None,
            entry_block: f,
            function_name: FALLBACK.into(),
        });
    }
    Ok(Dispatch {
        entries: out,
        dispatcher_blocks: region,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evm::{assemble, disassemble, recover_blocks, selector_of};

    const TWO_FN: &str = "
        PUSH1 0x80
        PUSH1 0x40
        MSTORE
        PUSH1 0x04
        CALLDATASIZE
        LT
        PUSH2 @fallback
        JUMPI
        PUSH1 0x00
        CALLDATALOAD
        PUSH1 0xe0
        SHR
        DUP1
        PUSH4 @sel(get())
        EQ
        PUSH2 @get
        JUMPI
        DUP1
        PUSH4 @sel(set(uint256))
        EQ
        PUSH2 @set
        JUMPI
    fallback:
        PUSH1 0x00
        DUP1
        REVERT
    get:
        PUSH1 0x00
        SLOAD
        PUSH1 0x00
        MSTORE
        PUSH1 0x20
        PUSH1 0x00
        RETURN
    set:
        PUSH1 0x04
        CALLDATALOAD
        PUSH1 0x00
        SSTORE
        STOP
    ";

    fn dispatch(src: &str) -> Result<Dispatch, FrontendError> {
        identify_functions(&recover_blocks(disassemble(&assemble(src).unwrap()).unwrap()))
    }

    #[test]
    fn two_selectors_and_fallback() {
        let d = dispatch(TWO_FN).unwrap();
        let sels: Vec<_> = d.entries.iter().map(|e| e.selector).collect();
        assert_eq!(
            sels,
            vec![Some(selector_of("get()")), Some(selector_of("set(uint256)")), None]
        );
        assert_eq!(d.entries[0].function_name, format_selector(selector_of("get()")));
        assert_eq!(d.entries[2].function_name, FALLBACK);
        let entry_blocks: BTreeSet<usize> = d.entries.iter().map(|e| e.entry_block).collect();
        assert!(d.dispatcher_blocks.is_disjoint(&entry_blocks));
    }

    #[test]
    fn no_calldataload_is_no_dispatcher() {
        assert_eq!(dispatch("PUSH1 0x00\nSLOAD\nPOP\nSTOP"), Err(FrontendError::NoDispatcher));
        assert_eq!(single_entry().entries.len(), 1);
    }
}
