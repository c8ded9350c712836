use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::graphs::{CallGraph, CallNode};
use crate::ir::flow::{is_revert_guard, predecessors, DefUse};
use crate::ir::{BlockId, FuncId, InstrRef, Instruction, Opcode, Operand, Program, ValueId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, serde::Deserialize)]
pub enum Rule {
    Reentrancy,
    Timestamp,
    DoS,
    Overflow,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::Reentrancy, Rule::Timestamp, Rule::DoS, Rule::Overflow];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Reentrancy => "Reentrancy",
            Rule::Timestamp => "Timestamp",
            Rule::DoS => "DoS",
            Rule::Overflow => "Overflow",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Rule::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown rule `{s}`"))
    }
}

/// A located vulnerability signal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Indicator {
    pub block: BlockId,
    /// The instruction the rule fired on.
    pub site: InstrRef,
    pub rule: Rule,
    /// Supporting instructions, e.g. the TIMESTAMP feeding a branch.
    pub witnesses: Vec<InstrRef>,
    pub detail: String,
}

/// Whether the call at `site` leaves the calling contract.
pub fn is_external_call(program: &Program<'_>, cg: &CallGraph, site: InstrRef, inst: &Instruction) -> bool {
    if !inst.opcode.is_contract_call() {
        return false;
    }
    match cg.sites.get(&site) {
        Some(CallNode::Func(g)) => {
            program.func_info(*g).contract != program.func_info(program.func_of(site.block)).contract
        }
        _ => true,
    }
}

pub fn detect_indicators(program: &Program<'_>, cg: &CallGraph) -> Vec<Indicator> {
    let mut out = Vec::new();
    for f in program.func_ids() {
        let du = DefUse::new(program, f);
        reentrancy(program, cg, f, &mut out);
        timestamp(program, &du, f, &mut out);
        dos(program, cg, f, &mut out);
        overflow(program, &du, f, &mut out);
    }
    out.sort();
    out
}

fn reentrancy(program: &Program<'_>, cg: &CallGraph, f: FuncId, out: &mut Vec<Indicator>) {
    let external: Vec<InstrRef> = program
        .func_instrs(f)
        .filter(|(site, inst)| is_external_call(program, cg, *site, inst))
        .map(|(site, _)| site)
        .collect();
    if external.is_empty() {
        return;
    }
    for &site in &external {
        // Value sent to a resolved function stays inside analyzed code.
        if program.instr(site).opcode != Opcode::CallValueCall || cg.resolved(site).is_some() {
            continue;
        }
        out.push(Indicator {
            block: site.block,
            site,
            rule: Rule::Reentrancy,
            witnesses: external.clone(),
            detail: format!("value-transferring external call in {}", program.func_name(f)),
        });
    }
}

fn timestamp(program: &Program<'_>, du: &DefUse, f: FuncId, out: &mut Vec<Indicator>) {
    let sources: Vec<(InstrRef, ValueId)> = program
        .func_instrs(f)
        .filter(|(_, i)| matches!(i.opcode, Opcode::Timestamp | Opcode::Number))
        .filter_map(|(site, i)| i.result.map(|v| (site, v)))
        .collect();
    let mut branches: Vec<(InstrRef, Vec<InstrRef>)> = Vec::new();
    for (src, v) in sources {
        for site in du.forward(program, &[v]) {
            if program.instr(site).opcode != Opcode::JumpI {
                continue;
            }
            match branches.iter_mut().find(|(j, _)| *j == site) {
                Some((_, w)) => w.push(src),
                None => branches.push((site, vec![src])),
            }
        }
    }
    for (site, witnesses) in branches {
        out.push(Indicator {
            block: site.block,
            site,
            rule: Rule::Timestamp,
            witnesses,
            detail: format!("block time decides a branch in {}", program.func_name(f)),
        });
    }
}

/// Blocks of `f` lying inside some loop. Loops are found from DFS back edges;
/// the body of a back edge `t -> h` is `h` plus every block that reaches `t`
/// without passing through `h`.
pub fn loop_blocks(program: &Program<'_>, f: FuncId) -> BTreeSet<BlockId> {
    let entry = program.entry_of(f);
    let mut back_edges = Vec::new();
    let mut state: std::collections::HashMap<BlockId, u8> = Default::default();
    let mut stack = vec![(entry, program.successors(entry), 0usize)];
    state.insert(entry, 1);
    while let Some((b, succ, i)) = stack.last_mut() {
        if let Some(&s) = succ.get(*i) {
            *i += 1;
            let b = *b;
            match state.get(&s).copied() {
                None => {
                    state.insert(s, 1);
                    let next = program.successors(s);
                    stack.push((s, next, 0));
                }
                Some(1) => back_edges.push((b, s)),
                _ => {}
            }
        } else {
            state.insert(*b, 2);
            stack.pop();
        }
    }
    let preds = predecessors(program, f);
    let mut body = BTreeSet::new();
    for (tail, header) in back_edges {
        body.insert(header);
        let mut seen = HashSet::from([header]);
        let mut queue = VecDeque::from([tail]);
        while let Some(b) = queue.pop_front() {
            if !seen.insert(b) {
                continue;
            }
            body.insert(b);
            for p in preds.get(&b).into_iter().flatten() {
                queue.push_back(*p);
            }
        }
    }
    body
}

fn dos(program: &Program<'_>, cg: &CallGraph, f: FuncId, out: &mut Vec<Indicator>) {
    let in_loop = loop_blocks(program, f);
    for &b in &in_loop {
        for (site, inst) in program.instrs(b) {
            if is_external_call(program, cg, site, inst) {
                out.push(Indicator {
                    block: b,
                    site,
                    rule: Rule::DoS,
                    witnesses: Vec::new(),
                    detail: format!("external call inside a loop in {}", program.func_name(f)),
                });
            }
        }
    }
}

/// An arithmetic result is checked when a comparison of it against one of the
/// instruction's own operands decides a revert guard, possibly via ISZERO.
pub fn is_checked(program: &Program<'_>, du: &DefUse, site: InstrRef) -> bool {
    let inst = program.instr(site);
    let Some(r) = inst.result else {
        return false;
    };
    let result = Operand::Value(r);
    for cmp_site in du.uses.get(&r).into_iter().flatten() {
        let cmp = program.instr(*cmp_site);
        if !matches!(cmp.opcode, Opcode::Lt | Opcode::Gt | Opcode::Eq) {
            continue;
        }
        let against_operand = cmp
            .operands
            .iter()
            .any(|o| *o != result && inst.operands.contains(o));
        if !against_operand || !cmp.operands.contains(&result) {
            continue;
        }
        if let Some(c) = cmp.result {
            if decides_revert_guard(program, du, c) {
                return true;
            }
        }
    }
    false
}

fn decides_revert_guard(program: &Program<'_>, du: &DefUse, v: ValueId) -> bool {
    let mut seen = HashSet::new();
    let mut stack = vec![v];
    while let Some(v) = stack.pop() {
        if !seen.insert(v) {
            continue;
        }
        for site in du.uses.get(&v).into_iter().flatten() {
            let i = program.instr(*site);
            match i.opcode {
                Opcode::JumpI if i.operands.first() == Some(&Operand::Value(v)) => {
                    if is_revert_guard(program, *site) {
                        return true;
                    }
                }
                Opcode::IsZero => stack.extend(i.result),
                _ => {}
            }
        }
    }
    false
}

fn overflow(program: &Program<'_>, du: &DefUse, f: FuncId, out: &mut Vec<Indicator>) {
    for (site, inst) in program.func_instrs(f) {
        if !inst.opcode.is_overflowable() || is_checked(program, du, site) {
            continue;
        }
        // Dead results, e.g. lifted array slot arithmetic.
        if inst.result.is_none_or(|r| du.uses.get(&r).is_none_or(|u| u.is_empty())) {
            continue;
        }
        out.push(Indicator {
            block: site.block,
            site,
            rule: Rule::Overflow,
            witnesses: Vec::new(),
            detail: format!("unchecked {} in {}", inst.opcode, program.func_name(f)),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_callgraph, Bindings};
    use crate::ir::parse_ir;

    fn indicators(src: &str) -> Vec<(Rule, String)> {
        let u = parse_ir(src).unwrap();
        let p = Program::new(&u);
        let cg = build_callgraph(&p, &Bindings::new());
        detect_indicators(&p, &cg)
            .into_iter()
            .map(|i| (i.rule, p.block_name(i.block).to_string()))
            .collect()
    }

    #[test]
    fn checked_add_is_not_flagged() {
        let found = indicators(
            "\
contract A
statevar total slot=0 kind=scalar
function f public(x:uint)
block b0
  v0 = SLOAD $total
  v1 = ADD v0 %x
  v2 = LT v1 v0
  JUMPI v2 b1 b2
block b1
  REVERT
block b2
  SSTORE $total v1
  STOP
",
        );
        assert!(found.is_empty(), "{found:?}");
    }

    #[test]
    fn unchecked_add_is_flagged() {
        let found = indicators(
            "contract A\nfunction f public(x:uint)\nblock b0\n  v1 = ADD %x 1\n  RETURN v1\n",
        );
        assert_eq!(found, vec![(Rule::Overflow, "A.f.b0".to_string())]);
    }

    #[test]
    fn dead_add_is_not_flagged() {
        let found = indicators("contract A\nfunction f public(x:uint)\nblock b0\n  v1 = ADD %x 1\n  STOP\n");
        assert_eq!(found, vec![]);
    }

    #[test]
    fn comparison_not_guarding_revert_leaves_add_unchecked() {
        let found = indicators(
            "\
contract A
function f public(x:uint)
block b0
  v1 = ADD %x 1
  v2 = LT v1 %x
  JUMPI v2 b1 b2
block b1
  STOP
block b2
  STOP
",
        );
        assert_eq!(found, vec![(Rule::Overflow, "A.f.b0".to_string())]);
    }

    #[test]
    fn timestamp_through_iszero() {
        let found = indicators(
            "\
contract A
function f public()
block b0
  v0 = TIMESTAMP
  v1 = ISZERO v0
  JUMPI v1 b1 b2
block b1
  STOP
block b2
  STOP
",
        );
        assert_eq!(found, vec![(Rule::Timestamp, "A.f.b0".to_string())]);
    }

    #[test]
    fn call_value_to_own_contract_is_not_reentrancy() {
        let found = indicators(
            "\
contract A
function f public()
block b0
  v0 = CALLVALUECALL 1 A.g
  STOP
function g public()
block b0
  STOP
",
        );
        assert!(found.is_empty(), "{found:?}");
    }

    #[test]
    fn external_call_in_loop_is_dos() {
        let found = indicators(
            "\
contract A
function f public()
block b0
  JUMP b1
block b1
  v0 = CALL B.g
  JUMPI v0 b1 b2
block b2
  STOP
contract B
function g public()
block b0
  STOP
",
        );
        assert_eq!(found, vec![(Rule::DoS, "A.f.b1".to_string())]);
    }

    #[test]
    fn loop_body_of_nested_loops() {
        let u = parse_ir(
            "\
contract A
function f public()
block b0
  JUMP b1
block b1
  JUMPI 1 b2 b4
block b2
  JUMPI 1 b2 b3
block b3
  JUMP b1
block b4
  STOP
",
        )
        .unwrap();
        let p = Program::new(&u);
        let f = p.lookup_func("A", "f").unwrap();
        let names: Vec<_> = loop_blocks(&p, f).into_iter().map(|b| p.block_name(b).to_string()).collect();
        assert_eq!(names, ["A.f.b1", "A.f.b2", "A.f.b3"]);
    }
}
