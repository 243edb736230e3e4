//! T-position computation and the NT-DCEG quotient graph.
//!
//! Positions are computed by backward partition refinement on a finite
//! quotient of the infinite tree. The infinite tree is periodic, so every
//! situation at slice `t >= N-1` is represented by a node keyed on (unit
//! type, last `N-1` slice paths, within-slice node); the refinement fixpoint
//! on that finite node set certifies subtree equivalence for all later
//! slices. Situations of the initial slices are kept as themselves. Blocks
//! start split by (slice class, within-slice depth, stage) — the time
//! constraint of a T-position, the local condition, and the colouring — and
//! are split until the labelled successor structure is constant per block.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::{
    Ceg, CegEdge, CegPosition, EdgeKind, EdgeTarget, GraphEdge, Ntdceg, Position, PositionId,
    SliceClass,
};
use crate::model::staging::{
    extract_id_template, homog_key, require_buildable, require_valid, HomogKey, HomogTemplate,
    StagedTreePrefix, StageId, StagingError,
};
use crate::model::tog::{unroll_tog, SitId, TogError, UNodeKind, Unrolled};
use crate::model::tree::{EventTree, Label};
use crate::SIZE_GUARD;

#[derive(Debug, Error)]
pub enum PositionError {
    #[error(transparent)]
    Staging(#[from] StagingError),
    #[error(transparent)]
    Tog(#[from] TogError),
    #[error("size guard: {count} vertices exceed the limit of {max}")]
    SizeGuard { count: usize, max: usize },
    #[error("unroll slice count must be at least 1")]
    ZeroSlices,
}

/// Partition of the prefix situations into T-positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TPositionPartition {
    /// Sorted member lists, ordered by canonical representative.
    pub blocks: Vec<Vec<SitId>>,
    pub block_of: BTreeMap<SitId, usize>,
}

impl TPositionPartition {
    pub fn from_blocks(mut blocks: Vec<Vec<SitId>>) -> Self {
        for b in &mut blocks {
            b.sort();
        }
        blocks.sort();
        let mut block_of = BTreeMap::new();
        for (i, b) in blocks.iter().enumerate() {
            for s in b {
                block_of.insert(s.clone(), i);
            }
        }
        TPositionPartition { blocks, block_of }
    }

    pub fn same_block(&self, a: &SitId, b: &SitId) -> bool {
        self.block_of.get(a) == self.block_of.get(b)
    }

    /// True when every block of `self` is contained in a block of `other`.
    pub fn refines(&self, other: &TPositionPartition) -> bool {
        self.blocks.iter().all(|b| {
            let Some(&target) = b.first().and_then(|s| other.block_of.get(s)) else {
                return false;
            };
            b.iter().all(|s| other.block_of.get(s) == Some(&target))
        })
    }
}

/// Node of the finite refinement quotient.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum RefNode {
    /// A situation of slices `-1 ..= N-2`, kept individually.
    Init(SitId),
    /// All situations at slices `>= N-1` sharing a homogeneous key.
    Homog(HomogKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum RefTarget {
    Node(usize),
    SliceSink(i32),
    GlobalSink,
}

struct RefGraph {
    nodes: Vec<RefNode>,
    /// Label-sorted successor lists.
    succ: Vec<Vec<(Label, RefTarget)>>,
    /// (slice class code, within depth, stage); slice code `i32::MAX` marks
    /// the homogeneous class.
    key: Vec<(i32, usize, StageId)>,
    /// A prefix situation inhabiting each node (for probabilities/bijections).
    witness: Vec<SitId>,
    index: BTreeMap<RefNode, usize>,
}

fn cartesian_power(items: &[Vec<Label>], n: usize) -> Vec<Vec<Vec<Label>>> {
    let mut out: Vec<Vec<Vec<Label>>> = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * items.len());
        for prefix in &out {
            for item in items {
                let mut p = prefix.clone();
                p.push(item.clone());
                next.push(p);
            }
        }
        out = next;
    }
    out
}

fn build_ref_graph(
    prefix: &StagedTreePrefix,
    unrolled: &Unrolled,
    template: &HomogTemplate,
) -> Result<RefGraph, PositionError> {
    let n = prefix.horizon;
    let boundary = n as i32 - 1;
    let slice = &prefix.tog.t_slice;

    let units: Vec<Vec<Label>> = match &prefix.tog.t_minus1 {
        Some(t) => t.leaves().into_iter().map(|l| t.path(l)).collect(),
        None => vec![Vec::new()],
    };
    let exits: Vec<Vec<Label>> = slice.recurrent_leaves().into_iter().map(|l| slice.path(l)).collect();
    let ctxs = cartesian_power(&exits, n.saturating_sub(1));

    // Node universe, deterministically ordered: initial situations first.
    let mut nodes: Vec<RefNode> = Vec::new();
    for un in unrolled.situations() {
        if unrolled.nodes[un].slice <= boundary - 1 {
            nodes.push(RefNode::Init(unrolled.nodes[un].id.clone()));
        }
    }
    for unit in &units {
        for ctx in &ctxs {
            for w in slice.situations() {
                nodes.push(RefNode::Homog(HomogKey {
                    unit: unit.clone(),
                    ctx: ctx.clone(),
                    within: w,
                }));
            }
        }
    }
    nodes.sort();
    if nodes.len() > SIZE_GUARD {
        return Err(PositionError::SizeGuard { count: nodes.len(), max: SIZE_GUARD });
    }
    let index: BTreeMap<RefNode, usize> = nodes.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();

    // Witnesses: initial nodes witness themselves; homogeneous keys are
    // inhabited by slice N-1..N prefix situations (slice N covers all keys).
    let mut witness: Vec<Option<SitId>> = vec![None; nodes.len()];
    for un in unrolled.situations() {
        let node = &unrolled.nodes[un];
        let rn = if node.slice <= boundary - 1 {
            RefNode::Init(node.id.clone())
        } else {
            RefNode::Homog(homog_key(unrolled, un, n))
        };
        let i = index[&rn];
        if witness[i].is_none() || witness[i].as_ref().unwrap() > &node.id {
            witness[i] = Some(node.id.clone());
        }
    }

    let mut succ: Vec<Vec<(Label, RefTarget)>> = Vec::with_capacity(nodes.len());
    let mut key: Vec<(i32, usize, StageId)> = Vec::with_capacity(nodes.len());
    for rn in &nodes {
        match rn {
            RefNode::Init(sit) => {
                let un = unrolled.by_id(sit).expect("prefix situation");
                let mut edges = Vec::new();
                for (label, c) in &unrolled.nodes[un].children {
                    let child = &unrolled.nodes[*c];
                    let target = match child.kind {
                        UNodeKind::TerminalLeaf => RefTarget::SliceSink(child.slice),
                        UNodeKind::FrontierLeaf => unreachable!("initial slices are fully unrolled"),
                        UNodeKind::Situation => {
                            let crn = if child.slice <= boundary - 1 {
                                RefNode::Init(child.id.clone())
                            } else {
                                RefNode::Homog(homog_key(unrolled, *c, n))
                            };
                            RefTarget::Node(index[&crn])
                        }
                    };
                    edges.push((label.clone(), target));
                }
                succ.push(edges);
                key.push((
                    unrolled.nodes[un].slice,
                    unrolled.within_depth(un, &prefix.tog),
                    prefix.assignment[sit].clone(),
                ));
            }
            RefNode::Homog(hk) => {
                let mut edges = Vec::new();
                for (label, c) in slice.children(hk.within) {
                    let target = if !slice.is_leaf(*c) {
                        RefTarget::Node(index[&RefNode::Homog(HomogKey {
                            unit: hk.unit.clone(),
                            ctx: hk.ctx.clone(),
                            within: *c,
                        })])
                    } else if slice.node(*c).leaf_kind == Some(crate::model::tree::LeafKind::Recurrent) {
                        let mut ctx = hk.ctx.clone();
                        if !ctx.is_empty() {
                            ctx.remove(0);
                            ctx.push(slice.path(*c));
                        }
                        RefTarget::Node(index[&RefNode::Homog(HomogKey {
                            unit: hk.unit.clone(),
                            ctx,
                            within: EventTree::ROOT,
                        })])
                    } else {
                        RefTarget::GlobalSink
                    };
                    edges.push((label.clone(), target));
                }
                succ.push(edges);
                let stage = template
                    .stage_id(hk)
                    .expect("template covers every homogeneous key")
                    .clone();
                key.push((i32::MAX, slice.depth(hk.within), stage));
            }
        }
    }

    let witness = witness
        .into_iter()
        .map(|w| w.expect("every quotient node is inhabited by a prefix situation"))
        .collect();
    Ok(RefGraph { nodes, succ, key, witness, index })
}

/// Splits blocks until the labelled successor-block structure is constant
/// inside every block. Returns one block id per node, numbered in the order
/// of each block's smallest node index (deterministic).
fn refine(graph: &RefGraph) -> Vec<usize> {
    let mut block: Vec<usize> = {
        let mut groups: BTreeMap<&(i32, usize, StageId), Vec<usize>> = BTreeMap::new();
        for (i, k) in graph.key.iter().enumerate() {
            groups.entry(k).or_default().push(i);
        }
        let mut block = vec![0usize; graph.nodes.len()];
        for (b, (_, members)) in groups.into_iter().enumerate() {
            for m in members {
                block[m] = b;
            }
        }
        block
    };

    loop {
        let mut groups: BTreeMap<(usize, Vec<(Label, isize)>), Vec<usize>> = BTreeMap::new();
        for i in 0..graph.nodes.len() {
            let sig: Vec<(Label, isize)> = graph.succ[i]
                .iter()
                .map(|(l, t)| {
                    let code = match t {
                        RefTarget::Node(j) => block[*j] as isize,
                        RefTarget::SliceSink(s) => -2 - *s as isize * 2,
                        RefTarget::GlobalSink => -1,
                    };
                    (l.clone(), code)
                })
                .collect();
            groups.entry((block[i], sig)).or_default().push(i);
        }
        if groups.len() == block.iter().collect::<std::collections::BTreeSet<_>>().len() {
            break;
        }
        // Renumber deterministically by smallest node index per group.
        let mut reps: Vec<(usize, Vec<usize>)> = groups
            .into_values()
            .map(|members| (members[0], members))
            .collect();
        reps.sort();
        for (b, (_, members)) in reps.into_iter().enumerate() {
            for m in members {
                block[m] = b;
            }
        }
    }
    block
}

fn node_of_situation(
    unrolled: &Unrolled,
    un: usize,
    horizon: usize,
    index: &BTreeMap<RefNode, usize>,
) -> usize {
    let node = &unrolled.nodes[un];
    let rn = if node.slice <= horizon as i32 - 2 {
        RefNode::Init(node.id.clone())
    } else {
        RefNode::Homog(homog_key(unrolled, un, horizon))
    };
    index[&rn]
}

/// Coarsest T-position partition of the prefix situations (T = N-1).
pub fn compute_positions(prefix: &StagedTreePrefix, tol: f64) -> Result<TPositionPartition, PositionError> {
    let (unrolled, template) = require_buildable(prefix, tol)?;
    let graph = build_ref_graph(prefix, &unrolled, &template)?;
    let block = refine(&graph);
    let mut members: BTreeMap<usize, Vec<SitId>> = BTreeMap::new();
    for un in unrolled.situations() {
        let b = block[node_of_situation(&unrolled, un, prefix.horizon, &graph.index)];
        members.entry(b).or_default().push(unrolled.nodes[un].id.clone());
    }
    Ok(TPositionPartition::from_blocks(members.into_values().collect()))
}

/// Builds the NT-DCEG: the quotient graph over T-positions with per-slice
/// sinks, the global sink, temporal / cyclical edge sets and the
/// initial/homogeneous split.
pub fn build_ntdceg(prefix: &StagedTreePrefix, tol: f64) -> Result<Ntdceg, PositionError> {
    let (unrolled, template) = require_buildable(prefix, tol)?;
    let graph = build_ref_graph(prefix, &unrolled, &template)?;
    let block = refine(&graph);

    // Collect blocks with their member situations and representative node.
    let mut block_members: BTreeMap<usize, Vec<SitId>> = BTreeMap::new();
    let mut rep_node: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, b) in block.iter().enumerate() {
        rep_node.entry(*b).or_insert(i);
        let e = rep_node.get_mut(b).unwrap();
        if graph.nodes[i] < graph.nodes[*e] {
            *e = i;
        }
    }
    for un in unrolled.situations() {
        let b = block[node_of_situation(&unrolled, un, prefix.horizon, &graph.index)];
        block_members.entry(b).or_default().push(unrolled.nodes[un].id.clone());
    }

    // Deterministic position order: slice class, depth, canonical name.
    let mut order: Vec<(SliceClass, usize, SitId, usize)> = block_members
        .iter()
        .map(|(b, mems)| {
            let (code, depth, _) = &graph.key[rep_node[b]];
            let class = if *code == i32::MAX { SliceClass::Homogeneous } else { SliceClass::Initial(*code) };
            let name = mems.iter().min().unwrap().clone();
            (class, *depth, name, *b)
        })
        .collect();
    order.sort();

    let mut pos_of_block: BTreeMap<usize, PositionId> = BTreeMap::new();
    let mut positions = Vec::with_capacity(order.len());
    for (pid, (class, depth, name, b)) in order.iter().enumerate() {
        pos_of_block.insert(*b, pid);
        let mut mems = block_members[b].clone();
        mems.sort();
        positions.push(Position {
            id: pid,
            name: name.to_string(),
            members: mems,
            slice: *class,
            within_depth: *depth,
            stage: graph.key[rep_node[b]].2.clone(),
        });
    }

    // Edges from each block's representative node.
    let n = prefix.horizon as i32;
    let mut edges: Vec<GraphEdge> = Vec::new();
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); positions.len()];
    let mut slice_sinks: Vec<i32> = Vec::new();
    let mut has_global_sink = false;
    for (b, &rep) in &rep_node {
        let from = pos_of_block[b];
        let from_slice = graph.key[rep].0;
        let stage = &prefix.stages[&graph.key[rep].2];
        let sit = &graph.witness[rep];
        for (label, target) in &graph.succ[rep] {
            let prob = stage.prob_of(sit, label).expect("validated stage covers every edge label");
            let (to, kind) = match target {
                RefTarget::SliceSink(s) => {
                    if !slice_sinks.contains(s) {
                        slice_sinks.push(*s);
                    }
                    (EdgeTarget::SliceSink(*s), EdgeKind::Within)
                }
                RefTarget::GlobalSink => {
                    has_global_sink = true;
                    (EdgeTarget::GlobalSink, EdgeKind::Within)
                }
                RefTarget::Node(j) => {
                    let to = EdgeTarget::Position(pos_of_block[&block[*j]]);
                    let kind = if from_slice == i32::MAX {
                        // Homogeneous part: re-entry edges close the loop.
                        if is_boundary_edge(&graph.nodes[rep], &prefix.tog.t_slice, label) {
                            EdgeKind::Cyclical
                        } else {
                            EdgeKind::Within
                        }
                    } else if graph.key[*j].0 == from_slice {
                        EdgeKind::Within
                    } else {
                        // Into the next slice; the target is the homogeneous
                        // part exactly when from_slice == N-2.
                        EdgeKind::Temporal(from_slice)
                    };
                    (to, kind)
                }
            };
            let e = GraphEdge { from, to, label: label.clone(), prob, kind };
            out[from].push(edges.len());
            edges.push(e);
        }
    }
    slice_sinks.sort_unstable();
    debug_assert!(slice_sinks.iter().all(|s| *s <= n - 2));

    let root_node = node_of_situation(&unrolled, unrolled.root(), prefix.horizon, &graph.index);
    let root = pos_of_block[&block[root_node]];

    Ok(Ntdceg {
        prefix: prefix.clone(),
        positions,
        edges,
        out,
        root,
        slice_sinks,
        has_global_sink,
    })
}

/// Whether a label out of a homogeneous node is a recurrent-exit event.
fn is_boundary_edge(node: &RefNode, slice: &EventTree, label: &str) -> bool {
    let RefNode::Homog(hk) = node else { return false };
    match slice.child(hk.within, label) {
        Some(c) => {
            slice.is_leaf(c)
                && slice.node(c).leaf_kind == Some(crate::model::tree::LeafKind::Recurrent)
        }
        None => false,
    }
}

/// Unrolls the model into the finite CEG over `slices` time-slices:
/// position copies per slice, truncated at the horizon, with all leaves
/// merged into a single sink and the partition re-coarsened by vertex
/// contraction (shorter futures can merge positions the infinite model
/// keeps apart).
pub fn unroll_to_ceg(model: &Ntdceg, slices: usize) -> Result<Ceg, PositionError> {
    if slices == 0 {
        return Err(PositionError::ZeroSlices);
    }
    let horizon = slices as i32 - 1;
    let root_slice = if model.prefix.tog.t_minus1.is_some() { -1 } else { 0 };

    // Reachable copies.
    let mut nodes: Vec<(i32, PositionId)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut stack = vec![(root_slice, model.root)];
    while let Some((s, p)) = stack.pop() {
        if !seen.insert((s, p)) {
            continue;
        }
        nodes.push((s, p));
        for e in model.out_edges(p) {
            if let EdgeTarget::Position(q) = e.to {
                let s2 = match e.kind {
                    EdgeKind::Within => s,
                    EdgeKind::Temporal(_) | EdgeKind::Cyclical => s + 1,
                };
                if s2 <= horizon {
                    stack.push((s2, q));
                }
            }
        }
    }
    nodes.sort_unstable();
    let index: BTreeMap<(i32, PositionId), usize> = nodes.iter().copied().enumerate().map(|(i, n)| (n, i)).collect();

    // Successors: None = the single sink.
    let succ: Vec<Vec<(Label, f64, Option<usize>)>> = nodes
        .iter()
        .map(|&(s, p)| {
            model
                .out_edges(p)
                .map(|e| {
                    let target = match (&e.to, e.kind) {
                        (EdgeTarget::Position(q), EdgeKind::Within) => index.get(&(s, *q)).copied(),
                        (EdgeTarget::Position(q), _) => index.get(&(s + 1, *q)).copied(),
                        _ => None,
                    };
                    (e.label.clone(), e.prob, target)
                })
                .collect()
        })
        .collect();

    // Contraction: refinement keyed by (depth, stage) then successor blocks.
    let mut block: Vec<usize> = {
        let mut groups: BTreeMap<(usize, &StageId), Vec<usize>> = BTreeMap::new();
        for (i, &(_, p)) in nodes.iter().enumerate() {
            groups
                .entry((model.positions[p].within_depth, &model.positions[p].stage))
                .or_default()
                .push(i);
        }
        let mut block = vec![0usize; nodes.len()];
        for (b, (_, ms)) in groups.into_iter().enumerate() {
            for m in ms {
                block[m] = b;
            }
        }
        block
    };
    loop {
        let mut groups: BTreeMap<(usize, Vec<(Label, isize)>), Vec<usize>> = BTreeMap::new();
        for i in 0..nodes.len() {
            let sig: Vec<(Label, isize)> = succ[i]
                .iter()
                .map(|(l, _, t)| (l.clone(), t.map(|j| block[j] as isize).unwrap_or(-1)))
                .collect();
            groups.entry((block[i], sig)).or_default().push(i);
        }
        let count = block.iter().collect::<std::collections::BTreeSet<_>>().len();
        if groups.len() == count {
            break;
        }
        let mut reps: Vec<(usize, Vec<usize>)> = groups.into_values().map(|ms| (ms[0], ms)).collect();
        reps.sort();
        for (b, (_, ms)) in reps.into_iter().enumerate() {
            for m in ms {
                block[m] = b;
            }
        }
    }

    let mut members: BTreeMap<usize, Vec<(i32, PositionId)>> = BTreeMap::new();
    for (i, b) in block.iter().enumerate() {
        members.entry(*b).or_default().push(nodes[i]);
    }
    let mut order: Vec<((i32, PositionId), usize)> =
        members.iter().map(|(b, ms)| (*ms.iter().min().unwrap(), *b)).collect();
    order.sort();
    let mut pos_of_block = BTreeMap::new();
    let mut positions = Vec::new();
    for (cid, (_, b)) in order.iter().enumerate() {
        pos_of_block.insert(*b, cid);
        let mut ms = members[b].clone();
        ms.sort_unstable();
        let rep = ms[0].1;
        positions.push(CegPosition {
            id: cid,
            members: ms,
            stage: model.positions[rep].stage.clone(),
            within_depth: model.positions[rep].within_depth,
        });
    }
    let mut edges = Vec::new();
    let mut out = vec![Vec::new(); positions.len()];
    for (b, ms) in &members {
        let from = pos_of_block[b];
        let rep = index[ms.iter().min().unwrap()];
        for (label, prob, target) in &succ[rep] {
            let to = target.map(|j| pos_of_block[&block[j]]);
            out[from].push(edges.len());
            edges.push(CegEdge { from, to, label: label.clone(), prob: *prob });
        }
    }
    let root = pos_of_block[&block[index[&(root_slice, model.root)]]];
    Ok(Ceg { slices, positions, edges, out, root })
}

/// Verification oracle: positions by literal subtree comparison on the
/// unrolled tree. Exponential in depth; guarded.
///
/// Returns the partition of the situations at slices `..= compare_to`,
/// where two situations are compared by their coloured, labelled subtrees
/// truncated `depth - 1 - compare_to` slice boundaries ahead — a uniform
/// lookahead, so the comparison is transitive and treats situations in
/// different slices fairly. Colours come from the prefix assignment inside
/// the prefix depth and from the transportable identifier template beyond
/// it, so the oracle shares only the model data with `compute_positions`,
/// not its refinement machinery.
pub fn brute_force_positions(
    prefix: &StagedTreePrefix,
    depth: usize,
    compare_to: i32,
    tol: f64,
) -> Result<TPositionPartition, PositionError> {
    if depth == 0 || compare_to >= depth as i32 {
        return Err(PositionError::ZeroSlices);
    }
    let (prefix_unrolled, _) = require_valid(prefix, tol)?;
    // Colours come from the assignment inside the prefix depth; deeper
    // slices need the transportable identifier template.
    let template = if depth > prefix.horizon + 1 {
        Some(extract_id_template(prefix, &prefix_unrolled).map_err(|v| {
            StagingError::Invalid(
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "),
            )
        })?)
    } else {
        None
    };

    // Estimate leaves before unrolling: L_{d+1} = L_d - R_d + R_d * L_1.
    let slice = &prefix.tog.t_slice;
    let l1 = slice.leaves().len().max(1);
    let r1 = slice.recurrent_leaves().len();
    let base = prefix.tog.t_minus1.as_ref().map(|t| t.leaves().len()).unwrap_or(1);
    let mut leaves = base as u128;
    let mut rec = base as u128;
    for _ in 0..depth {
        leaves = leaves - rec + rec * l1 as u128;
        rec *= r1 as u128;
    }
    if leaves > SIZE_GUARD as u128 {
        return Err(PositionError::SizeGuard { count: leaves as usize, max: SIZE_GUARD });
    }

    let unrolled = unroll_tog(&prefix.tog, depth)?;
    let boundary = prefix.horizon as i32 - 1;
    let lookahead = (depth as i32 - 1 - compare_to) as usize;

    let stage_of = |at: usize| -> StageId {
        let node = &unrolled.nodes[at];
        if node.slice <= prefix.horizon as i32 {
            prefix.assignment[&node.id].clone()
        } else {
            let hk = homog_key(&unrolled, at, prefix.horizon);
            template
                .as_ref()
                .and_then(|t| t.stage_id(&hk))
                .expect("template coverage")
                .clone()
        }
    };

    // Budgeted subtree signatures, intern-coded; children carry a
    // slice-crossing flag so that per-slice event counts must align, and
    // crossing a boundary with no budget left truncates to a cutoff mark.
    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    enum Sig {
        Terminal,
        Cutoff,
        Situation(StageId, Vec<(Label, bool, u32)>),
    }
    struct Ctx<'a> {
        unrolled: &'a Unrolled,
        intern: BTreeMap<Sig, u32>,
        memo: BTreeMap<(usize, usize), u32>,
    }
    fn sig_at(cx: &mut Ctx, stage_of: &dyn Fn(usize) -> StageId, at: usize, budget: usize) -> u32 {
        if let Some(&code) = cx.memo.get(&(at, budget)) {
            return code;
        }
        let node = &cx.unrolled.nodes[at];
        let sig = match node.kind {
            UNodeKind::TerminalLeaf => Sig::Terminal,
            UNodeKind::FrontierLeaf => Sig::Cutoff,
            UNodeKind::Situation => {
                let children: Vec<(Label, bool, u32)> = node
                    .children
                    .clone()
                    .into_iter()
                    .map(|(l, c)| {
                        let crosses = cx.unrolled.nodes[c].slice > node.slice;
                        let code = if crosses && budget == 0 {
                            let next = cx.intern.len() as u32;
                            *cx.intern.entry(Sig::Cutoff).or_insert(next)
                        } else {
                            sig_at(cx, stage_of, c, if crosses { budget - 1 } else { budget })
                        };
                        (l, crosses, code)
                    })
                    .collect();
                Sig::Situation(stage_of(at), children)
            }
        };
        let next = cx.intern.len() as u32;
        let code = *cx.intern.entry(sig).or_insert(next);
        cx.memo.insert((at, budget), code);
        code
    }

    let mut cx = Ctx { unrolled: &unrolled, intern: BTreeMap::new(), memo: BTreeMap::new() };
    let mut groups: BTreeMap<(i32, u32), Vec<SitId>> = BTreeMap::new();
    for un in unrolled.situations() {
        let node = &unrolled.nodes[un];
        if node.slice > compare_to {
            continue;
        }
        let class = if node.slice <= boundary - 1 { node.slice } else { i32::MAX };
        let code = sig_at(&mut cx, &stage_of, un, lookahead);
        groups.entry((class, code)).or_default().push(node.id.clone());
    }
    Ok(TPositionPartition::from_blocks(groups.into_values().collect()))
}

/// Restricts a partition to situations at slices `..= max_slice`.
pub fn restrict_partition(p: &TPositionPartition, max_slice: i32) -> TPositionPartition {
    let blocks: Vec<Vec<SitId>> = p
        .blocks
        .iter()
        .map(|b| b.iter().filter(|s| s.slice <= max_slice).cloned().collect::<Vec<_>>())
        .filter(|b: &Vec<SitId>| !b.is_empty())
        .collect();
    TPositionPartition::from_blocks(blocks)
}

/// Extracts the identifier-level staging template, failing hard on
/// conflicts.
pub fn template_of(prefix: &StagedTreePrefix) -> Result<HomogTemplate, PositionError> {
    let unrolled = prefix.unrolled()?;
    extract_id_template(prefix, &unrolled)
        .map_err(|v| StagingError::Invalid(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")).into())
}
