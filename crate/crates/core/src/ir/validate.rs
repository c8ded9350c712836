use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::Serialize;

use super::model::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ViolationKind {
    DuplicateContract,
    DuplicateFunction,
    DuplicateStateVar,
    DuplicateBlock,
    MissingEntry,
    UnreachableBlock,
    MissingTerminator,
    MisplacedTerminator,
    UnknownJumpTarget,
    UseBeforeDef,
    UnknownParam,
    UnknownStateVar,
    UnknownInternalCallee,
    TooManyOperands,
    BadResult,
    BadOperands,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// `contract[.function[.block]]`
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}: {}", self.location, self.kind, self.message)
    }
}

/// Checks every structural invariant of the IR and returns the violations
/// found. An empty list means the universe can be analyzed.
pub fn validate(universe: &Universe) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, location: String, message: String| {
        out.push(Violation {
            kind,
            location,
            message,
        })
    };

    let mut contract_names = HashSet::new();
    for c in &universe.contracts {
        if !contract_names.insert(c.name.as_str()) {
            push(
                ViolationKind::DuplicateContract,
                c.name.clone(),
                "contract declared twice".into(),
            );
        }
        let mut slots = HashSet::new();
        let mut names = HashSet::new();
        for s in &c.state_vars {
            if !slots.insert((s.slot, s.kind)) || !names.insert(s.name.as_str()) {
                push(
                    ViolationKind::DuplicateStateVar,
                    format!("{}.{}", c.name, s.name),
                    format!("slot {} kind {} declared twice", format_word(&s.slot), s.kind),
                );
            }
        }
        let mut fn_names = HashSet::new();
        for f in &c.functions {
            let loc = format!("{}.{}", c.name, f.name);
            if !fn_names.insert(f.name.as_str()) {
                push(
                    ViolationKind::DuplicateFunction,
                    loc.clone(),
                    "function declared twice".into(),
                );
            }
            check_function(c, f, &loc, &mut push);
        }
    }
    out.sort();
    out
}

fn check_function(
    c: &Contract,
    f: &Function,
    loc: &str,
    push: &mut impl FnMut(ViolationKind, String, String),
) {
    let mut labels = HashSet::new();
    for b in &f.blocks {
        if !labels.insert(b.label) {
            push(
                ViolationKind::DuplicateBlock,
                format!("{loc}.{}", b.label),
                "block label used twice".into(),
            );
        }
    }
    if !labels.contains(&f.entry) {
        push(
            ViolationKind::MissingEntry,
            loc.to_string(),
            format!("entry block {} not present", f.entry),
        );
    }

    for b in &f.blocks {
        let bloc = format!("{loc}.{}", b.label);
        let terminators = b.instructions.iter().filter(|i| i.opcode.is_terminator()).count();
        match b.instructions.last() {
            None => push(
                ViolationKind::MissingTerminator,
                bloc.clone(),
                "empty block".into(),
            ),
            Some(last) if !last.opcode.is_terminator() => push(
                ViolationKind::MissingTerminator,
                bloc.clone(),
                "block does not end in a terminator".into(),
            ),
            _ => {}
        }
        if terminators > 1 {
            push(
                ViolationKind::MisplacedTerminator,
                bloc.clone(),
                format!("{terminators} terminators"),
            );
        }
        for i in &b.instructions {
            check_instruction(c, f, i, &bloc, &labels, push);
        }
    }

    let reachable = reachable_labels(f);
    for b in &f.blocks {
        if labels.contains(&f.entry) && !reachable.contains(&b.label) {
            push(
                ViolationKind::UnreachableBlock,
                format!("{loc}.{}", b.label),
                "block not reachable from the entry".into(),
            );
        }
    }
    check_definitions(f, loc, &reachable, push);
}

fn check_instruction(
    c: &Contract,
    f: &Function,
    i: &Instruction,
    bloc: &str,
    labels: &HashSet<BlockLabel>,
    push: &mut impl FnMut(ViolationKind, String, String),
) {
    let op = i.opcode;
    if i.operands.len() > 3 {
        push(
            ViolationKind::TooManyOperands,
            bloc.to_string(),
            format!("{op} has {} operands", i.operands.len()),
        );
    }
    let no_result = op.is_terminator() || matches!(op, Opcode::Sstore | Opcode::Mstore);
    if no_result && i.result.is_some() {
        push(
            ViolationKind::BadResult,
            bloc.to_string(),
            format!("{op} cannot define a value"),
        );
    }
    for t in &i.targets {
        if !labels.contains(t) {
            push(
                ViolationKind::UnknownJumpTarget,
                bloc.to_string(),
                format!("jump to missing block {t}"),
            );
        }
    }
    let expected_targets = match op {
        Opcode::Jump => 1,
        Opcode::JumpI => 2,
        _ => 0,
    };
    let shape_ok = i.targets.len() == expected_targets
        && match op {
            Opcode::JumpI => i.operands.len() == 1,
            Opcode::CallValueCall => !i.operands.is_empty() && i.callee.is_some(),
            o if o.is_call() => i.callee.is_some(),
            Opcode::Sload => i.state_ref.is_some() || i.operands.len() == 1,
            Opcode::Sstore => {
                (i.state_ref.is_some() && i.operands.len() == 1)
                    || (i.state_ref.is_none() && i.operands.len() == 2)
            }
            Opcode::Const => i.operands.len() == 1,
            _ => true,
        }
        && (i.state_ref.is_none() || matches!(op, Opcode::Sload | Opcode::Sstore))
        && (i.callee.is_none() || op.is_call());
    if !shape_ok {
        push(
            ViolationKind::BadOperands,
            bloc.to_string(),
            format!("malformed {op}"),
        );
    }
    for operand in i.uses() {
        if let Operand::Param(p) = operand {
            if *p as usize >= f.params.len() {
                push(
                    ViolationKind::UnknownParam,
                    bloc.to_string(),
                    format!("parameter #{p} does not exist"),
                );
            }
        }
    }
    if let Some(r) = &i.state_ref {
        if c.state_var(&r.var).is_none() {
            push(
                ViolationKind::UnknownStateVar,
                bloc.to_string(),
                format!("state variable `{}` not declared", r.var),
            );
        }
    }
    if let Some(Callee::Internal { function }) = &i.callee {
        if c.function(function).is_none() {
            push(
                ViolationKind::UnknownInternalCallee,
                bloc.to_string(),
                format!("internal function `{function}` not declared"),
            );
        }
    }
}

pub(crate) fn reachable_labels(f: &Function) -> BTreeSet<BlockLabel> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![f.entry];
    while let Some(l) = stack.pop() {
        let Some(b) = f.block(l) else { continue };
        if seen.insert(l) {
            stack.extend(b.successors().iter().copied());
        }
    }
    seen
}

/// Must-defined dataflow: a use is legal only when every path from the entry
/// defines the value first. PHI operands only need a definition somewhere in
/// the function.
fn check_definitions(
    f: &Function,
    loc: &str,
    reachable: &BTreeSet<BlockLabel>,
    push: &mut impl FnMut(ViolationKind, String, String),
) {
    let all_defs: BTreeSet<ValueId> = f
        .blocks
        .iter()
        .flat_map(|b| b.instructions.iter().filter_map(|i| i.result))
        .collect();
    let mut preds: BTreeMap<BlockLabel, Vec<BlockLabel>> = BTreeMap::new();
    for b in &f.blocks {
        if !reachable.contains(&b.label) {
            continue;
        }
        for s in b.successors() {
            preds.entry(*s).or_default().push(b.label);
        }
    }
    let block_defs = |b: &BasicBlock| -> BTreeSet<ValueId> {
        b.instructions.iter().filter_map(|i| i.result).collect()
    };
    let mut out_sets: BTreeMap<BlockLabel, BTreeSet<ValueId>> = reachable
        .iter()
        .map(|l| (*l, all_defs.clone()))
        .collect();
    let in_set = |l: BlockLabel, outs: &BTreeMap<BlockLabel, BTreeSet<ValueId>>| {
        if l == f.entry {
            return BTreeSet::new();
        }
        let mut it = preds.get(&l).into_iter().flatten().filter_map(|p| outs.get(p));
        let first = it.next().cloned().unwrap_or_default();
        it.fold(first, |acc, s| acc.intersection(s).copied().collect())
    };
    loop {
        let mut changed = false;
        for b in f.blocks.iter().filter(|b| reachable.contains(&b.label)) {
            let mut out = in_set(b.label, &out_sets);
            out.extend(block_defs(b));
            if out_sets.get(&b.label) != Some(&out) {
                out_sets.insert(b.label, out);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for b in f.blocks.iter().filter(|b| reachable.contains(&b.label)) {
        let mut defined = in_set(b.label, &out_sets);
        for i in &b.instructions {
            for v in i.used_values() {
                let ok = if i.opcode == Opcode::Phi {
                    all_defs.contains(&v)
                } else {
                    defined.contains(&v)
                };
                if !ok {
                    push(
                        ViolationKind::UseBeforeDef,
                        format!("{loc}.{}", b.label),
                        format!("{v} used before definition"),
                    );
                }
            }
            if let Some(r) = i.result {
                defined.insert(r);
            }
        }
    }
}
