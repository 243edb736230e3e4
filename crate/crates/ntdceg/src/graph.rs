//! The finite cyclic NT-DCEG graph and its finite acyclic CEG unrollings.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::staging::{Stage, StagedTreePrefix, StageId};
use crate::model::tog::SitId;
use crate::model::tree::Label;

pub type PositionId = usize;

/// Where a position acts in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum SliceClass {
    /// Initial subgraph: occurs at exactly this slice (`-1 ..= N-2`).
    Initial(i32),
    /// Time-homogeneous subgraph: occurs at every slice `t >= N-1`.
    Homogeneous,
}

impl SliceClass {
    /// Whether the position occurs at time `t` in a model of order `n`.
    pub fn occurs_at(&self, t: i32, n: usize) -> bool {
        match self {
            SliceClass::Initial(s) => *s == t,
            SliceClass::Homogeneous => t >= n as i32 - 1,
        }
    }
}

/// A vertex of the NT-DCEG: an equivalence class of situations.
#[derive(Debug, Clone, Serialize)]
pub struct Position {
    pub id: PositionId,
    /// Canonical name: the smallest member situation id.
    pub name: String,
    /// Prefix situations merged into this position, sorted.
    pub members: Vec<SitId>,
    pub slice: SliceClass,
    pub within_depth: usize,
    pub stage: StageId,
}

/// Edge target: another position, the absorbing vertex of one initial
/// slice, or the global sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum EdgeTarget {
    Position(PositionId),
    SliceSink(i32),
    GlobalSink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum EdgeKind {
    /// Event inside one time-slice.
    Within,
    /// Temporal edge of the initial part, from slice `t` into `t + 1`.
    Temporal(i32),
    /// Cyclical temporal edge closing the homogeneous loop.
    Cyclical,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphEdge {
    pub from: PositionId,
    pub to: EdgeTarget,
    pub label: Label,
    pub prob: f64,
    pub kind: EdgeKind,
}

/// N time-slice dynamic chain event graph.
#[derive(Debug, Clone)]
pub struct Ntdceg {
    /// The staged prefix the graph was built from.
    pub prefix: StagedTreePrefix,
    pub positions: Vec<Position>,
    pub edges: Vec<GraphEdge>,
    /// Out-edge indices per position, sorted by label.
    pub out: Vec<Vec<usize>>,
    pub root: PositionId,
    /// Slices `t <= N-2` that have an absorbing vertex (terminal leaves).
    pub slice_sinks: Vec<i32>,
    pub has_global_sink: bool,
}

impl Ntdceg {
    pub fn order(&self) -> usize {
        self.prefix.horizon
    }

    pub fn stage(&self, id: &str) -> &Stage {
        &self.prefix.stages[id]
    }

    pub fn out_edges(&self, p: PositionId) -> impl Iterator<Item = &GraphEdge> {
        self.out[p].iter().map(|&e| &self.edges[e])
    }

    /// Position holding a given prefix situation.
    pub fn position_of(&self, sit: &SitId) -> Option<PositionId> {
        self.positions
            .iter()
            .find(|p| p.members.binary_search(sit).is_ok())
            .map(|p| p.id)
    }

    /// Positions in the initial subgraph.
    pub fn initial_positions(&self) -> impl Iterator<Item = &Position> {
        self.positions.iter().filter(|p| matches!(p.slice, SliceClass::Initial(_)))
    }

    /// Positions in the time-homogeneous subgraph.
    pub fn homogeneous_positions(&self) -> impl Iterator<Item = &Position> {
        self.positions.iter().filter(|p| p.slice == SliceClass::Homogeneous)
    }

    /// Temporal edges of the initial part (`E_dagger`).
    pub fn temporal_edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.edges.iter().filter(|e| matches!(e.kind, EdgeKind::Temporal(_)))
    }

    /// Cyclical temporal edges (`E_circ`).
    pub fn cyclical_edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Cyclical)
    }

    /// Sources of boundary edges out of slice `t` (the tail set), where `t`
    /// is capped at `N - 1` for the homogeneous part.
    pub fn tail_positions(&self, t: i32) -> Vec<PositionId> {
        let n = self.order() as i32;
        let mut out: Vec<PositionId> = self
            .edges
            .iter()
            .filter(|e| match e.kind {
                EdgeKind::Temporal(s) => s == t,
                EdgeKind::Cyclical => t >= n - 1,
                EdgeKind::Within => false,
            })
            .map(|e| e.from)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Targets of boundary edges entering slice `t`.
    pub fn head_positions(&self, t: i32) -> Vec<PositionId> {
        let n = self.order() as i32;
        let mut out: Vec<PositionId> = self
            .edges
            .iter()
            .filter(|e| match e.kind {
                EdgeKind::Temporal(s) => s + 1 == t,
                EdgeKind::Cyclical => t >= n - 1,
                EdgeKind::Within => false,
            })
            .filter_map(|e| match e.to {
                EdgeTarget::Position(p) => Some(p),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Vertex of a finite CEG: an equivalence class of (slice, position) copies.
#[derive(Debug, Clone, Serialize)]
pub struct CegPosition {
    pub id: usize,
    /// Merged copies, sorted; slices can differ when the truncated futures
    /// of situations in different slices coincide.
    pub members: Vec<(i32, PositionId)>,
    pub stage: StageId,
    pub within_depth: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CegEdge {
    pub from: usize,
    /// `None` targets the single sink.
    pub to: Option<usize>,
    pub label: Label,
    pub prob: f64,
}

/// Finite chain event graph over `slices` time-slices with a single sink.
#[derive(Debug, Clone)]
pub struct Ceg {
    pub slices: usize,
    pub positions: Vec<CegPosition>,
    pub edges: Vec<CegEdge>,
    pub out: Vec<Vec<usize>>,
    pub root: usize,
}

impl Ceg {
    pub fn out_edges(&self, p: usize) -> impl Iterator<Item = &CegEdge> {
        self.out[p].iter().map(|&e| &self.edges[e])
    }

    /// CEG vertex holding a copy of `pos` at absolute slice `t`.
    pub fn vertex_of(&self, t: i32, pos: PositionId) -> Option<usize> {
        self.positions
            .iter()
            .find(|p| p.members.binary_search(&(t, pos)).is_ok())
            .map(|p| p.id)
    }

    /// Root-to-sink paths with their probabilities, label sequences joined.
    pub fn path_probs(&self) -> BTreeMap<Vec<Label>, f64> {
        let mut out = BTreeMap::new();
        let mut stack: Vec<(usize, Vec<Label>, f64)> = vec![(self.root, Vec::new(), 1.0)];
        while let Some((at, path, prob)) = stack.pop() {
            for e in self.out_edges(at) {
                let mut p = path.clone();
                p.push(e.label.clone());
                match e.to {
                    Some(next) => stack.push((next, p, prob * e.prob)),
                    None => {
                        out.insert(p, prob * e.prob);
                    }
                }
            }
        }
        out
    }
}
