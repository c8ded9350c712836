use std::collections::BTreeMap;

use serde::Serialize;

use super::deps::{Access, RevertDep, RwDep};
use super::icfg::{Icfg, IcfgEdgeKind};
use crate::ir::{BlockId, InstrRef, StateVarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum SdgNode {
    Block(BlockId),
    State(StateVarId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdgEdgeKind {
    IntraCfg,
    InterCall,
    InterReturn,
    StateWrite,
    StateRead,
    StateRevert,
}

impl From<IcfgEdgeKind> for SdgEdgeKind {
    fn from(k: IcfgEdgeKind) -> Self {
        match k {
            IcfgEdgeKind::IntraCfg => SdgEdgeKind::IntraCfg,
            IcfgEdgeKind::InterCall => SdgEdgeKind::InterCall,
            IcfgEdgeKind::InterReturn => SdgEdgeKind::InterReturn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SdgEdge {
    pub src: SdgNode,
    pub dst: SdgNode,
    pub kind: SdgEdgeKind,
    pub state: Option<StateVarId>,
    pub site: Option<InstrRef>,
}

/// State dependency graph: the ICFG plus state-variable nodes and the
/// read/write/revert edges between blocks and state variables.
#[derive(Debug, Clone, Default)]
pub struct Sdg {
    pub icfg: Icfg,
    pub rw: Vec<RwDep>,
    pub revert: Vec<RevertDep>,
    pub edges: Vec<SdgEdge>,
    revert_from: BTreeMap<BlockId, Vec<RevertDep>>,
}

impl Sdg {
    pub fn state_nodes(&self) -> Vec<StateVarId> {
        let mut out: Vec<_> = self.rw.iter().map(|d| d.state).collect();
        out.extend(self.revert.iter().map(|d| d.state));
        out.sort();
        out.dedup();
        out
    }

    /// Revert edges leaving `b`.
    pub fn reverts_from(&self, b: BlockId) -> &[RevertDep] {
        self.revert_from.get(&b).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_sd_edges(&self) -> bool {
        !self.rw.is_empty() || !self.revert.is_empty()
    }

    /// Same graph with every state read/write and revert edge dropped.
    pub fn without_sd_edges(&self) -> Sdg {
        build_sdg(self.icfg.clone(), Vec::new(), Vec::new())
    }

    /// Same graph with only the revert edges dropped.
    pub fn without_revert_edges(&self) -> Sdg {
        build_sdg(self.icfg.clone(), self.rw.clone(), Vec::new())
    }
}

pub fn build_sdg(icfg: Icfg, rw: Vec<RwDep>, revert: Vec<RevertDep>) -> Sdg {
    let mut edges: Vec<SdgEdge> = icfg
        .edges
        .iter()
        .map(|e| SdgEdge {
            src: SdgNode::Block(e.src),
            dst: SdgNode::Block(e.dst),
            kind: e.kind.into(),
            state: None,
            site: e.site,
        })
        .collect();
    for d in &rw {
        let (src, dst, kind) = match d.access {
            Access::Write => (SdgNode::Block(d.block), SdgNode::State(d.state), SdgEdgeKind::StateWrite),
            Access::Read => (SdgNode::State(d.state), SdgNode::Block(d.block), SdgEdgeKind::StateRead),
        };
        edges.push(SdgEdge {
            src,
            dst,
            kind,
            state: Some(d.state),
            site: Some(d.site),
        });
    }
    let mut revert_from: BTreeMap<BlockId, Vec<RevertDep>> = BTreeMap::new();
    for d in &revert {
        edges.push(SdgEdge {
            src: SdgNode::Block(d.writer),
            dst: SdgNode::Block(d.target),
            kind: SdgEdgeKind::StateRevert,
            state: Some(d.state),
            site: None,
        });
        revert_from.entry(d.writer).or_default().push(*d);
    }
    edges.sort();
    Sdg {
        icfg,
        rw,
        revert,
        edges,
        revert_from,
    }
}
