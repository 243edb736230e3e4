//! Forward sampling and exact joint enumeration — the shared brute-force
//! oracle layer.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::graph::{EdgeKind, EdgeTarget, Ntdceg, PositionId};
use crate::model::staging::{homog_key, require_valid, StagedTreePrefix, StagingError};
use crate::model::tog::{unroll_tog, TogError, UNodeKind};
use crate::model::tree::Label;
use crate::walks::root_slice;
use crate::SIZE_GUARD;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("slice count must be at least 1")]
    ZeroSlices,
    #[error(transparent)]
    Staging(#[from] StagingError),
    #[error(transparent)]
    Tog(#[from] TogError),
    #[error("size guard: about {count} paths exceed the limit of {max}")]
    SizeGuard { count: usize, max: usize },
}

/// One sampled unit history.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    /// (slice of the event, event label, position the event left from).
    pub events: Vec<(i32, Label, PositionId)>,
    /// Slice of the terminating event, if the unit was absorbed.
    pub terminated_at: Option<i32>,
}

/// Draws `n` i.i.d. trajectories over slices `0 .. max_slices`, resolving
/// the invariant tree first when present.
///
/// Randomness: one ChaCha12 master stream seeded with `seed` hands each
/// trajectory its own sub-seed, so outputs are reproducible and trajectories
/// could be drawn in any order.
pub fn sample(
    model: &Ntdceg,
    n: usize,
    max_slices: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, SimError> {
    if max_slices == 0 {
        return Err(SimError::ZeroSlices);
    }
    // Cumulative probability table per position, edge order = label order.
    let cum: Vec<Vec<(f64, usize)>> = (0..model.positions.len())
        .map(|p| {
            let mut acc = 0.0;
            model.out[p]
                .iter()
                .map(|&e| {
                    acc += model.edges[e].prob;
                    (acc, e)
                })
                .collect()
        })
        .collect();

    let mut master = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let sub = master.gen::<u64>();
        let mut rng = ChaCha12Rng::seed_from_u64(sub);
        let mut at = model.root;
        let mut slice = root_slice(model);
        let mut events = Vec::new();
        let mut terminated_at = None;
        'unit: while (slice as i64) < max_slices as i64 {
            let u: f64 = rng.gen();
            let edge_idx = cum[at]
                .iter()
                .find(|(c, _)| u < *c)
                .map(|&(_, e)| e)
                .unwrap_or_else(|| cum[at].last().unwrap().1);
            let e = &model.edges[edge_idx];
            events.push((slice, e.label.clone(), at));
            match e.to {
                EdgeTarget::Position(next) => {
                    if matches!(e.kind, EdgeKind::Temporal(_) | EdgeKind::Cyclical) {
                        slice += 1;
                    }
                    at = next;
                }
                EdgeTarget::SliceSink(_) | EdgeTarget::GlobalSink => {
                    terminated_at = Some(slice);
                    break 'unit;
                }
            }
        }
        out.push(Trajectory { seed: sub, events, terminated_at });
    }
    Ok(out)
}

/// Exact path-probability table.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    /// Full event path -> probability; paths that terminate early are keyed
    /// by their (shorter) path.
    pub rows: BTreeMap<Vec<Label>, f64>,
}

impl JointTable {
    pub fn total(&self) -> f64 {
        self.rows.values().sum()
    }
}

/// Estimated leaf count of an unroll (paths of the joint).
fn estimate_paths(prefix: &StagedTreePrefix, slices: usize) -> u128 {
    let slice = &prefix.tog.t_slice;
    let l1 = slice.leaves().len().max(1) as u128;
    let r1 = slice.recurrent_leaves().len() as u128;
    let base = prefix.tog.t_minus1.as_ref().map(|t| t.leaves().len()).unwrap_or(1) as u128;
    let mut leaves = base;
    let mut rec = base;
    for _ in 0..slices {
        leaves = leaves - rec + rec * l1;
        rec *= r1;
    }
    leaves
}

/// Enumerates every root-to-leaf path of the staged tree unrolled over
/// `slices` time-slices, directly on the tree (independent of the quotient
/// graph). Initial slices read the prefix assignment, later slices the
/// homogeneous template. The table sums to one.
pub fn exact_joint(prefix: &StagedTreePrefix, slices: usize, tol: f64) -> Result<JointTable, SimError> {
    if slices == 0 {
        return Err(SimError::ZeroSlices);
    }
    let est = estimate_paths(prefix, slices);
    if est > SIZE_GUARD as u128 {
        return Err(SimError::SizeGuard { count: est as usize, max: SIZE_GUARD });
    }
    let (_, template) = require_valid(prefix, tol)?;
    let unrolled = unroll_tog(&prefix.tog, slices)?;
    let boundary = prefix.horizon as i32 - 1;

    let mut rows = BTreeMap::new();
    // (node, prob) over situations; leaves emit.
    let mut stack: Vec<(usize, f64)> = vec![(unrolled.root(), 1.0)];
    while let Some((at, prob)) = stack.pop() {
        let node = &unrolled.nodes[at];
        match node.kind {
            UNodeKind::TerminalLeaf | UNodeKind::FrontierLeaf => {
                rows.insert(node.id.path.clone(), prob);
            }
            UNodeKind::Situation => {
                let stage_id = if node.slice <= boundary - 1 {
                    &prefix.assignment[&node.id]
                } else {
                    template
                        .stage_id(&homog_key(&unrolled, at, prefix.horizon))
                        .expect("template coverage")
                };
                let stage = &prefix.stages[stage_id];
                let labels: std::collections::BTreeSet<Label> =
                    node.children.iter().map(|(l, _)| l.clone()).collect();
                let law = stage.law_for(&labels).expect("stage covers the label set");
                for (label, c) in &node.children {
                    stack.push((*c, prob * law[label]));
                }
            }
        }
    }
    Ok(JointTable { rows })
}

/// The same table computed by walking the quotient graph; the tree-based
/// `exact_joint` is the oracle this is checked against.
pub fn graph_joint(model: &Ntdceg, slices: usize) -> Result<JointTable, SimError> {
    if slices == 0 {
        return Err(SimError::ZeroSlices);
    }
    let est = estimate_paths(&model.prefix, slices);
    if est > SIZE_GUARD as u128 {
        return Err(SimError::SizeGuard { count: est as usize, max: SIZE_GUARD });
    }
    let mut rows = BTreeMap::new();
    let mut path: Vec<Label> = Vec::new();
    fn dfs(
        model: &Ntdceg,
        at: PositionId,
        slice: i32,
        max: i32,
        prob: f64,
        path: &mut Vec<Label>,
        rows: &mut BTreeMap<Vec<Label>, f64>,
    ) {
        for e in model.out_edges(at) {
            path.push(e.label.clone());
            match e.to {
                EdgeTarget::SliceSink(_) | EdgeTarget::GlobalSink => {
                    *rows.entry(path.clone()).or_insert(0.0) += prob * e.prob;
                }
                EdgeTarget::Position(next) => {
                    let next_slice = match e.kind {
                        EdgeKind::Within => slice,
                        _ => slice + 1,
                    };
                    if next_slice >= max {
                        *rows.entry(path.clone()).or_insert(0.0) += prob * e.prob;
                    } else {
                        dfs(model, next, next_slice, max, prob * e.prob, path, rows);
                    }
                }
            }
            path.pop();
        }
    }
    dfs(model, model.root, root_slice(model), slices as i32, 1.0, &mut path, &mut rows);
    Ok(JointTable { rows })
}
