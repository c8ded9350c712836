use std::collections::BTreeSet;

use crate::graphs::{weak_components, CallGraph};
use crate::ir::FuncId;

/// Functions of every weakly connected call-graph component that holds both
/// an entry function and an indicator function.
pub fn prune_wcc(cg: &CallGraph, entry_funcs: &BTreeSet<FuncId>, indicator_funcs: &BTreeSet<FuncId>) -> BTreeSet<FuncId> {
    weak_components(cg)
        .into_iter()
        .filter(|c| c.iter().any(|f| entry_funcs.contains(f)) && c.iter().any(|f| indicator_funcs.contains(f)))
        .flatten()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{CallEdge, CallKind, CallNode};

    fn graph(n: usize, edges: &[(u32, u32)]) -> CallGraph {
        CallGraph {
            num_funcs: n,
            edges: edges
                .iter()
                .map(|&(a, b)| CallEdge {
                    caller: FuncId(a),
                    callee: CallNode::Func(FuncId(b)),
                    kind: CallKind::Internal,
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn keeps_only_components_with_both() {
        let cg = graph(5, &[(0, 1), (2, 3)]);
        let entries = BTreeSet::from([FuncId(0), FuncId(2)]);
        let inds = BTreeSet::from([FuncId(1), FuncId(4)]);
        assert_eq!(prune_wcc(&cg, &entries, &inds), BTreeSet::from([FuncId(0), FuncId(1)]));
    }

    #[test]
    fn external_node_does_not_join_components() {
        let mut cg = graph(2, &[]);
        for caller in [0, 1] {
            cg.edges.push(CallEdge {
                caller: FuncId(caller),
                callee: CallNode::External,
                kind: CallKind::CrossContract,
            });
        }
        let out = prune_wcc(&cg, &BTreeSet::from([FuncId(0)]), &BTreeSet::from([FuncId(1)]));
        assert!(out.is_empty());
    }
}
