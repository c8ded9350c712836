use serde::Serialize;

use super::callgraph::CallGraph;
use crate::ir::{BlockId, InstrRef, Opcode, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcfgEdgeKind {
    IntraCfg,
    InterCall,
    InterReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct IcfgEdge {
    pub src: BlockId,
    pub dst: BlockId,
    pub kind: IcfgEdgeKind,
    /// Call instruction for inter-procedural edges.
    pub site: Option<InstrRef>,
}

/// Per-function CFGs joined by call and return edges.
#[derive(Debug, Clone, Default)]
pub struct Icfg {
    pub num_blocks: usize,
    pub edges: Vec<IcfgEdge>,
    succ: Vec<Vec<BlockId>>,
}

impl Icfg {
    pub fn from_edges(num_blocks: usize, mut edges: Vec<IcfgEdge>) -> Self {
        edges.sort();
        edges.dedup();
        let mut succ = vec![Vec::new(); num_blocks];
        for e in &edges {
            succ[e.src.0 as usize].push(e.dst);
        }
        for s in &mut succ {
            s.sort();
            s.dedup();
        }
        Icfg {
            num_blocks,
            edges,
            succ,
        }
    }

    /// Distinct successors sorted by block id.
    pub fn successors(&self, b: BlockId) -> &[BlockId] {
        &self.succ[b.0 as usize]
    }

    pub fn has_edge(&self, src: BlockId, dst: BlockId) -> bool {
        self.successors(src).binary_search(&dst).is_ok()
    }

    pub fn count(&self, kind: IcfgEdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }
}

/// Exit blocks of a function: those ending in RETURN or STOP.
pub fn exit_blocks(program: &Program<'_>, f: crate::ir::FuncId) -> Vec<BlockId> {
    program
        .func_info(f)
        .blocks()
        .filter(|b| {
            matches!(
                program.block(*b).terminator().map(|t| t.opcode),
                Some(Opcode::Return | Opcode::Stop)
            )
        })
        .collect()
}

pub fn build_icfg(program: &Program<'_>, callgraph: &CallGraph) -> Icfg {
    let mut edges = Vec::new();
    for b in program.block_ids() {
        for s in program.successors(b) {
            edges.push(IcfgEdge {
                src: b,
                dst: s,
                kind: IcfgEdgeKind::IntraCfg,
                site: None,
            });
        }
    }
    for site in callgraph.sites.keys() {
        let Some(callee) = callgraph.resolved(*site) else {
            continue;
        };
        edges.push(IcfgEdge {
            src: site.block,
            dst: program.entry_of(callee),
            kind: IcfgEdgeKind::InterCall,
            site: Some(*site),
        });
        let continuation = program.successors(site.block);
        for exit in exit_blocks(program, callee) {
            for &c in &continuation {
                edges.push(IcfgEdge {
                    src: exit,
                    dst: c,
                    kind: IcfgEdgeKind::InterReturn,
                    site: Some(*site),
                });
            }
        }
    }
    Icfg::from_edges(program.num_blocks(), edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_callgraph, Bindings};
    use crate::ir::parse_ir;

    #[test]
    fn single_function_icfg_is_its_cfg() {
        let u = parse_ir(
            "contract A\nfunction f public(x:uint)\nblock b0\n  JUMPI %x b1 b2\nblock b1\n  JUMP b2\nblock b2\n  STOP\n",
        )
        .unwrap();
        let p = Program::new(&u);
        let icfg = build_icfg(&p, &build_callgraph(&p, &Bindings::new()));
        let pairs: Vec<_> = icfg.edges.iter().map(|e| (e.src.0, e.dst.0, e.kind)).collect();
        assert_eq!(
            pairs,
            vec![
                (0, 1, IcfgEdgeKind::IntraCfg),
                (0, 2, IcfgEdgeKind::IntraCfg),
                (1, 2, IcfgEdgeKind::IntraCfg)
            ]
        );
    }

    #[test]
    fn call_and_return_edges() {
        let u = parse_ir(
            "\
contract A
function f public()
block b0
  INTERNALCALL g
  JUMP b1
block b1
  STOP
function g private()
block b0
  JUMPI 1 b1 b2
block b1
  RETURN
block b2
  REVERT
",
        )
        .unwrap();
        let p = Program::new(&u);
        let icfg = build_icfg(&p, &build_callgraph(&p, &Bindings::new()));
        let f0 = p.lookup_block_name("A.f.b0").unwrap();
        let f1 = p.lookup_block_name("A.f.b1").unwrap();
        let g0 = p.lookup_block_name("A.g.b0").unwrap();
        let g1 = p.lookup_block_name("A.g.b1").unwrap();
        assert!(icfg.has_edge(f0, g0));
        assert!(icfg.has_edge(g1, f1));
        assert_eq!(icfg.count(IcfgEdgeKind::InterCall), 1);
        assert_eq!(icfg.count(IcfgEdgeKind::InterReturn), 1);
    }
}
