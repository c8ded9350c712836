//! Text dumps of the graphs: a line-per-edge list and Graphviz DOT.

use std::fmt::Write;

use super::callgraph::{CallGraph, CallKind, CallNode};
use super::icfg::{Icfg, IcfgEdgeKind};
use super::sdg::{Sdg, SdgEdgeKind, SdgNode};
use crate::ir::Program;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Edges,
    Dot,
}

struct Line {
    src: String,
    dst: String,
    kind: &'static str,
    state: Option<String>,
}

fn call_kind(k: CallKind) -> &'static str {
    match k {
        CallKind::Internal => "internal",
        CallKind::CrossContract => "cross-contract",
    }
}

fn icfg_kind(k: IcfgEdgeKind) -> &'static str {
    match k {
        IcfgEdgeKind::IntraCfg => "intra-cfg",
        IcfgEdgeKind::InterCall => "inter-call",
        IcfgEdgeKind::InterReturn => "inter-return",
    }
}

fn sdg_kind(k: SdgEdgeKind) -> &'static str {
    match k {
        SdgEdgeKind::IntraCfg => "intra-cfg",
        SdgEdgeKind::InterCall => "inter-call",
        SdgEdgeKind::InterReturn => "inter-return",
        SdgEdgeKind::StateWrite => "state-write",
        SdgEdgeKind::StateRead => "state-read",
        SdgEdgeKind::StateRevert => "state-revert",
    }
}

fn render(lines: Vec<Line>, format: GraphFormat, name: &str) -> String {
    let mut out = String::new();
    match format {
        GraphFormat::Edges => {
            for l in lines {
                let _ = write!(out, "{} -> {} [{}]", l.src, l.dst, l.kind);
                if let Some(s) = l.state {
                    let _ = write!(out, " [s={s}]");
                }
                out.push('\n');
            }
        }
        GraphFormat::Dot => {
            let _ = writeln!(out, "digraph {name} {{");
            for l in lines {
                let label = match l.state {
                    Some(s) => format!("{} s={s}", l.kind),
                    None => l.kind.to_string(),
                };
                let _ = writeln!(out, "  \"{}\" -> \"{}\" [label=\"{label}\"];", l.src, l.dst);
            }
            out.push_str("}\n");
        }
    }
    out
}

pub fn emit_callgraph(program: &Program<'_>, g: &CallGraph, format: GraphFormat) -> String {
    let lines = g
        .edges
        .iter()
        .map(|e| Line {
            src: program.func_name(e.caller).to_string(),
            dst: match e.callee {
                CallNode::Func(f) => program.func_name(f).to_string(),
                CallNode::External => "EXTERNAL".to_string(),
            },
            kind: call_kind(e.kind),
            state: None,
        })
        .collect();
    render(lines, format, "callgraph")
}

pub fn emit_icfg(program: &Program<'_>, g: &Icfg, format: GraphFormat) -> String {
    let lines = g
        .edges
        .iter()
        .map(|e| Line {
            src: program.block_name(e.src).to_string(),
            dst: program.block_name(e.dst).to_string(),
            kind: icfg_kind(e.kind),
            state: None,
        })
        .collect();
    render(lines, format, "icfg")
}

pub fn emit_sdg(program: &Program<'_>, g: &Sdg, format: GraphFormat) -> String {
    let node = |n: SdgNode| match n {
        SdgNode::Block(b) => program.block_name(b).to_string(),
        SdgNode::State(s) => program.state_info(s).name.clone(),
    };
    let lines = g
        .edges
        .iter()
        .map(|e| Line {
            src: node(e.src),
            dst: node(e.dst),
            kind: sdg_kind(e.kind),
            state: e.state.map(|s| program.state_info(s).name.clone()),
        })
        .collect();
    render(lines, format, "sdg")
}
