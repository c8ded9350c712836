//! Call graph, ICFG and state dependency graph construction.

mod callgraph;
mod deps;
mod emit;
mod icfg;
mod sdg;

pub use callgraph::{
    build_callgraph, resolve_call, weak_components, Bindings, CallEdge, CallGraph, CallKind, CallNode, Resolution,
};
pub use deps::{extract_revert_deps, extract_rw_deps, guarded_reads, Access, GuardedRead, RevertDep, RwDep};
pub use emit::{emit_callgraph, emit_icfg, emit_sdg, GraphFormat};
pub use icfg::{build_icfg, exit_blocks, Icfg, IcfgEdge, IcfgEdgeKind};
pub use sdg::{build_sdg, Sdg, SdgEdge, SdgEdgeKind, SdgNode};
