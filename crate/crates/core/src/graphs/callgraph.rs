use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::Serialize;

use crate::diag::{Diagnostic, Stage};
use crate::ir::{Callee, FuncId, InstrRef, Instruction, Opcode, Operand, Program, StateKind, ValueId, Word};

/// Binds address-typed storage slots to the contract they point at.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings {
    slots: BTreeMap<(String, Word), String>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, contract: impl Into<String>, slot: Word, target: impl Into<String>) {
        self.slots.insert((contract.into(), slot), target.into());
    }

    pub fn target(&self, contract: &str, slot: Word) -> Option<&str> {
        self.slots
            .get(&(contract.to_string(), slot))
            .map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Word, &str)> {
        self.slots
            .iter()
            .map(|((c, s), t)| (c.as_str(), *s, t.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum CallNode {
    Func(FuncId),
    /// Calls whose target could not be resolved.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CallKind {
    Internal,
    CrossContract,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CallEdge {
    pub caller: FuncId,
    pub callee: CallNode,
    pub kind: CallKind,
}

#[derive(Debug, Clone, Default)]
pub struct CallGraph {
    pub num_funcs: usize,
    /// One edge per distinct (caller, callee), sorted.
    pub edges: Vec<CallEdge>,
    /// Resolution of every call instruction in the program.
    pub sites: BTreeMap<InstrRef, CallNode>,
    pub diagnostics: Vec<Diagnostic>,
}

impl CallGraph {
    pub fn callees(&self, f: FuncId) -> impl Iterator<Item = &CallEdge> {
        self.edges.iter().filter(move |e| e.caller == f)
    }

    pub fn resolved(&self, site: InstrRef) -> Option<FuncId> {
        match self.sites.get(&site) {
            Some(CallNode::Func(f)) => Some(*f),
            _ => None,
        }
    }
}

/// Outcome of resolving one call instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Func(FuncId),
    External,
    /// A binding or name pointed at something absent from the universe.
    Dangling(String),
}

/// Resolves the callee of `inst` inside function `f`.
///
/// Order: explicit `Contract.function` name, then a manifest binding of the
/// storage slot the address was loaded from (or a literal matching a contract
/// address), else external.
pub fn resolve_call(
    program: &Program<'_>,
    bindings: &Bindings,
    f: FuncId,
    inst: &Instruction,
) -> Resolution {
    let caller_contract = program.contract_of(f);
    match &inst.callee {
        None => Resolution::External,
        Some(Callee::Internal { function }) => match program.lookup_func(&caller_contract.name, function) {
            Some(g) => Resolution::Func(g),
            None => Resolution::Dangling(format!("{}.{function}", caller_contract.name)),
        },
        Some(Callee::Named { contract, function }) => match program.lookup_func(contract, function) {
            Some(g) => Resolution::Func(g),
            None if program.contract_index(contract).is_some() => {
                Resolution::Dangling(format!("{contract}.{function}"))
            }
            None => Resolution::External,
        },
        Some(Callee::Dynamic { address, function }) => {
            let Some(target) = address_target(program, bindings, f, address) else {
                return Resolution::External;
            };
            if program.contract_index(&target).is_none() {
                return Resolution::Dangling(target);
            }
            match function.as_deref().and_then(|func| program.lookup_func(&target, func)) {
                Some(g) => Resolution::Func(g),
                None => Resolution::Dangling(format!(
                    "{target}.{}",
                    function.as_deref().unwrap_or("?")
                )),
            }
        }
    }
}

fn address_target(
    program: &Program<'_>,
    bindings: &Bindings,
    f: FuncId,
    address: &Operand,
) -> Option<String> {
    operand_target(program, bindings, f, address, &mut HashSet::new())
}

/// Follows single-operand PHI copies back to a scalar SLOAD or a literal.
/// Every definition must agree on the target.
fn operand_target(
    program: &Program<'_>,
    bindings: &Bindings,
    f: FuncId,
    address: &Operand,
    seen: &mut HashSet<ValueId>,
) -> Option<String> {
    match address {
        Operand::Lit(w) => {
            let bytes: [u8; 32] = w.to_be_bytes();
            program
                .universe
                .contracts
                .iter()
                .find(|c| c.address.is_some_and(|a| a[..] == bytes[12..]))
                .map(|c| c.name.clone())
        }
        Operand::Param(_) => None,
        Operand::Value(v) => {
            if !seen.insert(*v) {
                return None;
            }
            let contract = program.contract_of(f);
            let mut target: Option<String> = None;
            for (_, inst) in program.func_instrs(f) {
                if inst.result != Some(*v) {
                    continue;
                }
                let t = match (&inst.opcode, &inst.state_ref, inst.operands.as_slice()) {
                    (Opcode::Sload, Some(r), _) if r.key.is_none() => contract
                        .state_var(&r.var)
                        .filter(|s| s.kind == StateKind::Scalar)
                        .and_then(|s| bindings.target(&contract.name, s.slot))
                        .map(str::to_string),
                    (Opcode::Phi, None, [src]) => operand_target(program, bindings, f, src, seen),
                    _ => None,
                }?;
                match &target {
                    Some(prev) if *prev != t => return None,
                    _ => target = Some(t),
                }
            }
            target
        }
    }
}

pub fn build_callgraph(program: &Program<'_>, bindings: &Bindings) -> CallGraph {
    let mut g = CallGraph {
        num_funcs: program.num_funcs(),
        ..Default::default()
    };
    let mut edges: BTreeMap<(FuncId, CallNode), CallKind> = BTreeMap::new();
    for f in program.func_ids() {
        let my_contract = program.func_info(f).contract;
        for (site, inst) in program.func_instrs(f) {
            if !inst.opcode.is_call() {
                continue;
            }
            let node = match resolve_call(program, bindings, f, inst) {
                Resolution::Func(callee) => CallNode::Func(callee),
                Resolution::External => CallNode::External,
                Resolution::Dangling(name) => {
                    g.diagnostics.push(Diagnostic::warning(
                        Stage::Graphs,
                        format!(
                            "ManifestTargetUnknown: call in {} targets `{name}`, which is not in the analysis universe",
                            program.func_name(f)
                        ),
                    ));
                    CallNode::External
                }
            };
            g.sites.insert(site, node);
            let kind = match node {
                CallNode::Func(callee) if program.func_info(callee).contract == my_contract => {
                    CallKind::Internal
                }
                _ => CallKind::CrossContract,
            };
            edges
                .entry((f, node))
                .and_modify(|k| *k = (*k).max(kind))
                .or_insert(kind);
        }
    }
    g.edges = edges
        .into_iter()
        .map(|((caller, callee), kind)| CallEdge {
            caller,
            callee,
            kind,
        })
        .collect();
    g
}

/// Functions in each weakly connected component of the call graph. The
/// external node is not a member and does not join components.
pub fn weak_components(graph: &CallGraph) -> Vec<BTreeSet<FuncId>> {
    let mut adj: HashMap<FuncId, Vec<FuncId>> = HashMap::new();
    for e in &graph.edges {
        if let CallNode::Func(callee) = e.callee {
            adj.entry(e.caller).or_default().push(callee);
            adj.entry(callee).or_default().push(e.caller);
        }
    }
    let mut seen = vec![false; graph.num_funcs];
    let mut out = Vec::new();
    for start in 0..graph.num_funcs {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = BTreeSet::new();
        let mut queue = std::collections::VecDeque::from([FuncId(start as u32)]);
        while let Some(f) = queue.pop_front() {
            comp.insert(f);
            for n in adj.get(&f).into_iter().flatten() {
                if !seen[n.0 as usize] {
                    seen[n.0 as usize] = true;
                    queue.push_back(*n);
                }
            }
        }
        out.push(comp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_ir;

    const TEXT: &str = "\
contract A
statevar b slot=0 kind=scalar
function f public()
block b0
  v0 = SLOAD $b
  CALL v0.g
  CALL v0.g
  INTERNALCALL h
  CALL 0x00000000000000000000000000000000000000bb.g
  CALL Nowhere.x
  STOP
function h private()
block b0
  STOP
contract B @0x00000000000000000000000000000000000000bb
function g public()
block b0
  STOP
";

    #[test]
    fn resolves_bindings_literals_and_names() {
        let u = parse_ir(TEXT).unwrap();
        let p = Program::new(&u);
        let mut bindings = Bindings::new();
        bindings.bind("A", Word::ZERO, "B");
        let g = build_callgraph(&p, &bindings);
        let f = p.lookup_func("A", "f").unwrap();
        let h = p.lookup_func("A", "h").unwrap();
        let bg = p.lookup_func("B", "g").unwrap();
        assert_eq!(
            g.edges,
            vec![
                CallEdge { caller: f, callee: CallNode::Func(h), kind: CallKind::Internal },
                CallEdge { caller: f, callee: CallNode::Func(bg), kind: CallKind::CrossContract },
                CallEdge { caller: f, callee: CallNode::External, kind: CallKind::CrossContract },
            ]
        );
        assert!(g.diagnostics.is_empty());
    }

    #[test]
    fn unknown_binding_target_dangles_with_warning() {
        let u = parse_ir(TEXT).unwrap();
        let p = Program::new(&u);
        let mut bindings = Bindings::new();
        bindings.bind("A", Word::ZERO, "Ghost");
        let g = build_callgraph(&p, &bindings);
        assert_eq!(g.diagnostics.len(), 2);
        assert!(g.diagnostics[0].message.contains("Ghost"));
        let f = p.lookup_func("A", "f").unwrap();
        assert!(g.edges.contains(&CallEdge {
            caller: f,
            callee: CallNode::External,
            kind: CallKind::CrossContract
        }));
    }

    #[test]
    fn no_calls_no_edges() {
        let u = parse_ir("contract A\nfunction f public()\nblock b0\n  STOP\n").unwrap();
        let p = Program::new(&u);
        let g = build_callgraph(&p, &Bindings::new());
        assert!(g.edges.is_empty());
        assert_eq!(weak_components(&g).len(), 1);
    }
}
