//! Walk enumeration on the cyclic graph.
//!
//! A walk from the root to a position at time `t` crosses slice boundaries
//! exactly `t` minus the root slice times; within the homogeneous part the
//! boundary edges are the cyclical temporal ones, so the number of cyclical
//! traversals is pinned to `h(t) = max(0, t - N + 1)` automatically. All
//! enumeration is depth-first over label-sorted out-edges, which makes walk
//! order lexicographic and reports reproducible.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::graph::{EdgeKind, EdgeTarget, Ntdceg, PositionId};
use crate::model::tree::Label;
use crate::SIZE_GUARD;

#[derive(Debug, Error, PartialEq)]
pub enum WalkError {
    #[error("time {t} precedes the root slice {root}")]
    TimeBeforeRoot { t: i32, root: i32 },
    #[error("size guard: more than {max} walks")]
    SizeGuard { max: usize },
    #[error("targets are empty")]
    EmptyTargets,
}

/// A root-to-position walk carrying its monomial of primitive probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Walk {
    /// Edge indices into the model's edge table, in traversal order.
    pub edges: Vec<usize>,
    pub end: PositionId,
    pub prob: f64,
}

impl Walk {
    pub fn labels<'m>(&self, model: &'m Ntdceg) -> Vec<&'m Label> {
        self.edges.iter().map(|&e| &model.edges[e].label).collect()
    }

    pub fn display(&self, model: &Ntdceg) -> String {
        let mut s = format!("w[{}]", model.positions[model.root].name);
        for &e in &self.edges {
            let edge = &model.edges[e];
            let to = match edge.to {
                EdgeTarget::Position(p) => model.positions[p].name.clone(),
                EdgeTarget::SliceSink(t) => format!("sink@{t}"),
                EdgeTarget::GlobalSink => "sink".to_string(),
            };
            s.push_str(&format!(" -{}-> {}", edge.label, to));
        }
        s
    }
}

pub fn root_slice(model: &Ntdceg) -> i32 {
    if model.prefix.tog.t_minus1.is_some() {
        -1
    } else {
        0
    }
}

/// All root-to-target walks arriving at time `t`, in lexicographic label
/// order. An unreachable target set yields an empty list.
pub fn enumerate_walks(
    model: &Ntdceg,
    targets: &BTreeSet<PositionId>,
    t: i32,
) -> Result<Vec<Walk>, WalkError> {
    if targets.is_empty() {
        return Err(WalkError::EmptyTargets);
    }
    let start = root_slice(model);
    if t < start {
        return Err(WalkError::TimeBeforeRoot { t, root: start });
    }
    let mut out = Vec::new();
    let mut path: Vec<usize> = Vec::new();
    dfs_walks(model, model.root, start, t, targets, 1.0, &mut path, &mut out)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn dfs_walks(
    model: &Ntdceg,
    at: PositionId,
    time: i32,
    t: i32,
    targets: &BTreeSet<PositionId>,
    prob: f64,
    path: &mut Vec<usize>,
    out: &mut Vec<Walk>,
) -> Result<(), WalkError> {
    if time == t && targets.contains(&at) {
        if out.len() >= SIZE_GUARD {
            return Err(WalkError::SizeGuard { max: SIZE_GUARD });
        }
        out.push(Walk { edges: path.clone(), end: at, prob });
    }
    if time > t {
        return Ok(());
    }
    for (i, e) in model.out[at].iter().map(|&i| (i, &model.edges[i])) {
        let EdgeTarget::Position(next) = e.to else { continue };
        let next_time = match e.kind {
            EdgeKind::Within => time,
            EdgeKind::Temporal(_) | EdgeKind::Cyclical => time + 1,
        };
        if next_time > t {
            continue;
        }
        path.push(i);
        dfs_walks(model, next, next_time, t, targets, prob * e.prob, path, out)?;
        path.pop();
    }
    Ok(())
}

/// Endpoint of a slice-crossing verification path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathEnd {
    /// A source of boundary edges out of the cut slice.
    Tail(PositionId),
    SliceSink(i32),
    GlobalSink,
}

/// A path of the acyclic graph (cyclical edges removed) from the root,
/// through the entry positions of the cut slice, to the tail set or a sink.
#[derive(Debug, Clone)]
pub struct CutPath {
    pub edges: Vec<usize>,
    /// Visited positions with their times, root included.
    pub positions: Vec<(PositionId, i32)>,
    pub end: PathEnd,
    pub prob: f64,
}

impl CutPath {
    pub fn display(&self, model: &Ntdceg) -> String {
        let mut s = format!("p[{}]", model.positions[self.positions[0].0].name);
        for &e in &self.edges {
            let edge = &model.edges[e];
            let to = match edge.to {
                EdgeTarget::Position(p) => model.positions[p].name.clone(),
                EdgeTarget::SliceSink(t) => format!("sink@{t}"),
                EdgeTarget::GlobalSink => "sink".to_string(),
            };
            s.push_str(&format!(" -{}-> {}", edge.label, to));
        }
        s
    }
}

/// Enumerates the verification path set for slice `t`: in the graph without
/// cyclical edges, all paths from the root that end at a boundary-edge
/// source of slice `min(t, N-1)` or at that slice's sink.
pub fn cut_paths(model: &Ntdceg, t: i32) -> Result<Vec<CutPath>, WalkError> {
    let start = root_slice(model);
    if t < start {
        return Err(WalkError::TimeBeforeRoot { t, root: start });
    }
    let n = model.order() as i32;
    let t_eff = t.min(n - 1);
    let tails: BTreeSet<PositionId> = model.tail_positions(t_eff).into_iter().collect();

    let mut out = Vec::new();
    let mut edges: Vec<usize> = Vec::new();
    let mut positions: Vec<(PositionId, i32)> = vec![(model.root, start)];

    fn dfs(
        model: &Ntdceg,
        at: PositionId,
        time: i32,
        t_eff: i32,
        tails: &BTreeSet<PositionId>,
        prob: f64,
        edges: &mut Vec<usize>,
        positions: &mut Vec<(PositionId, i32)>,
        out: &mut Vec<CutPath>,
    ) -> Result<(), WalkError> {
        if time == t_eff && tails.contains(&at) {
            if out.len() >= SIZE_GUARD {
                return Err(WalkError::SizeGuard { max: SIZE_GUARD });
            }
            out.push(CutPath {
                edges: edges.clone(),
                positions: positions.clone(),
                end: PathEnd::Tail(at),
                prob,
            });
        }
        for (i, e) in model.out[at].iter().map(|&i| (i, &model.edges[i])) {
            if e.kind == EdgeKind::Cyclical {
                continue;
            }
            let next_time = match e.kind {
                EdgeKind::Within => time,
                EdgeKind::Temporal(_) => time + 1,
                EdgeKind::Cyclical => unreachable!(),
            };
            if next_time > t_eff {
                continue;
            }
            match e.to {
                EdgeTarget::Position(next) => {
                    edges.push(i);
                    positions.push((next, next_time));
                    dfs(model, next, next_time, t_eff, tails, prob * e.prob, edges, positions, out)?;
                    positions.pop();
                    edges.pop();
                }
                EdgeTarget::SliceSink(s) if next_time == t_eff => {
                    edges.push(i);
                    out.push(CutPath {
                        edges: edges.clone(),
                        positions: positions.clone(),
                        end: PathEnd::SliceSink(s),
                        prob: prob * e.prob,
                    });
                    edges.pop();
                }
                EdgeTarget::GlobalSink if next_time == t_eff => {
                    edges.push(i);
                    out.push(CutPath {
                        edges: edges.clone(),
                        positions: positions.clone(),
                        end: PathEnd::GlobalSink,
                        prob: prob * e.prob,
                    });
                    edges.pop();
                }
                _ => {}
            }
        }
        Ok(())
    }

    dfs(model, model.root, start, t_eff, &tails, 1.0, &mut edges, &mut positions, &mut out)?;
    Ok(out)
}
