use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{FlowError, OrderLabel, PairLabelSet};
use crate::corpus::HunkId;

/// Directed mental-flow graph. An edge `(a, b)` means `b` is a natural next
/// step once `a` is done. No transitive closure is ever taken.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowGraph {
    pub nodes: Vec<HunkId>,
    pub edges: BTreeSet<(HunkId, HunkId)>,
}

impl FlowGraph {
    /// Graph over `nodes` with the given edges. Self-loops and edges touching
    /// unknown nodes are rejected.
    pub fn from_edges(
        nodes: impl IntoIterator<Item = HunkId>,
        edges: impl IntoIterator<Item = (HunkId, HunkId)>,
    ) -> Result<Self, FlowError> {
        let nodes: BTreeSet<HunkId> = nodes.into_iter().collect();
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(FlowError::SelfLoop(a));
            }
            for n in [a, b] {
                if !nodes.contains(&n) {
                    return Err(FlowError::UnknownHunk(n));
                }
            }
            set.insert((a, b));
        }
        Ok(Self {
            nodes: nodes.into_iter().collect(),
            edges: set,
        })
    }

    pub fn has_edge(&self, a: HunkId, b: HunkId) -> bool {
        self.edges.contains(&(a, b))
    }

    pub fn contains(&self, n: HunkId) -> bool {
        self.nodes.binary_search(&n).is_ok()
    }

    pub fn in_degrees(&self) -> BTreeMap<HunkId, usize> {
        let mut deg: BTreeMap<HunkId, usize> = self.nodes.iter().map(|&n| (n, 0)).collect();
        for &(_, b) in &self.edges {
            *deg.entry(b).or_default() += 1;
        }
        deg
    }

    /// One-hop successors: unapplied nodes reachable by a single edge from
    /// some node in `prior`.
    pub fn successors(&self, prior: &BTreeSet<HunkId>) -> Result<BTreeSet<HunkId>, FlowError> {
        if let Some(&n) = prior.iter().find(|n| !self.contains(**n)) {
            return Err(FlowError::UnknownHunk(n));
        }
        Ok(self
            .edges
            .iter()
            .filter(|(a, b)| prior.contains(a) && !prior.contains(b))
            .map(|&(_, b)| b)
            .collect())
    }

    /// Nodes whose in-degree equals the graph minimum.
    pub fn min_indegree_candidates(&self) -> Result<BTreeSet<HunkId>, FlowError> {
        let deg = self.in_degrees();
        let min = *deg.values().min().ok_or(FlowError::EmptyGraph)?;
        Ok(deg.into_iter().filter(|&(_, d)| d == min).map(|(n, _)| n).collect())
    }

    /// Node/edge document for visualization tools.
    pub fn export(&self) -> GraphExport {
        GraphExport {
            nodes: self.nodes.iter().map(|n| n.to_string()).collect(),
            edges: self
                .edges
                .iter()
                .map(|(a, b)| ExportEdge {
                    from: a.to_string(),
                    to: b.to_string(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportEdge {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<String>,
    pub edges: Vec<ExportEdge>,
}

/// Edges induced by pairwise labels: `≺` gives `(a, b)`, `≻` gives `(b, a)`,
/// `∼` gives both, `⊥` gives nothing. Every pair must be labelled.
pub fn build_flow_graph(hunks: &[HunkId], labels: &PairLabelSet) -> Result<FlowGraph, FlowError> {
    let missing = labels.missing_pairs(hunks);
    if !missing.is_empty() {
        return Err(FlowError::IncompleteLabels(missing));
    }
    let mut sorted = hunks.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut edges = Vec::new();
    for (i, &a) in sorted.iter().enumerate() {
        for &b in &sorted[i + 1..] {
            match labels.get(a, b).expect("checked above") {
                OrderLabel::Precedes => edges.push((a, b)),
                OrderLabel::Follows => edges.push((b, a)),
                OrderLabel::Either => {
                    edges.push((a, b));
                    edges.push((b, a));
                }
                OrderLabel::Unrelated => {}
            }
        }
    }
    FlowGraph::from_edges(sorted, edges)
}
