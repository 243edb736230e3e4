//! The periodic generator of the infinite event tree.
//!
//! A `TogSpec` pairs a (possibly empty) time-invariant tree with a per-slice
//! tree. The infinite tree hangs a fresh copy of the slice tree under every
//! leaf of the invariant tree and, recursively, under every recurrent leaf
//! of each slice copy; terminal leaves are absorbed within their slice.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tree::{validate_event_tree, EventTree, Label, LeafKind, NodeId, TreeReport};

/// Canonical situation identifier: time-slice index plus the full event path
/// from the global root. Slice `-1` holds the time-invariant situations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SitId {
    pub slice: i32,
    pub path: Vec<Label>,
}

impl SitId {
    pub fn new(slice: i32, path: Vec<Label>) -> Self {
        SitId { slice, path }
    }
}

impl fmt::Display for SitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}:{}", self.slice, self.path.join("."))
    }
}

impl From<SitId> for String {
    fn from(s: SitId) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for SitId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        let rest = s.strip_prefix('s').ok_or_else(|| format!("bad situation id '{s}'"))?;
        let (slice, path) = rest.split_once(':').ok_or_else(|| format!("bad situation id '{s}'"))?;
        let slice: i32 = slice.parse().map_err(|_| format!("bad slice in '{s}'"))?;
        let path = if path.is_empty() {
            Vec::new()
        } else {
            path.split('.').map(|p| p.to_string()).collect()
        };
        Ok(SitId { slice, path })
    }
}

/// Tree object generator: the pair of finite trees that spans the infinite
/// periodic event tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TogSpec {
    /// Time-invariant prefix; `None` models a homogeneous unit population.
    /// Kept as an explicit option rather than a sentinel tree so that the
    /// `r = 0` convention is visible in the type.
    pub t_minus1: Option<EventTree>,
    pub t_slice: EventTree,
}

#[derive(Debug, Error, PartialEq)]
pub enum TogError {
    #[error("unroll depth must be at least 1")]
    ZeroDepth,
    #[error("per-slice tree is invalid: {0:?}")]
    InvalidSliceTree(Vec<String>),
    #[error("time-invariant tree is invalid: {0:?}")]
    InvalidInvariantTree(Vec<String>),
    #[error("per-slice tree has no recurrent leaf; the process cannot continue")]
    NoRecurrentLeaf,
}

impl TogSpec {
    pub fn new(t_minus1: Option<EventTree>, t_slice: EventTree) -> Self {
        TogSpec { t_minus1, t_slice }
    }

    /// Validates both trees and the wiring invariants.
    pub fn validate(&self) -> Result<(TreeReport, Option<TreeReport>), TogError> {
        let slice_report = validate_event_tree(&self.t_slice, true);
        if !slice_report.ok() {
            return Err(TogError::InvalidSliceTree(
                slice_report.violations.iter().map(|v| v.to_string()).collect(),
            ));
        }
        if slice_report.recurrent_leaf_count == 0 {
            return Err(TogError::NoRecurrentLeaf);
        }
        let inv_report = match &self.t_minus1 {
            Some(tree) => {
                let r = validate_event_tree(tree, false);
                if !r.ok() {
                    return Err(TogError::InvalidInvariantTree(
                        r.violations.iter().map(|v| v.to_string()).collect(),
                    ));
                }
                Some(r)
            }
            None => None,
        };
        Ok((slice_report, inv_report))
    }
}

/// Role of a node in an unrolled tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UNodeKind {
    /// Invariant-tree situation (slice -1) or slice-tree situation.
    Situation,
    /// Absorbed leaf of a slice copy.
    TerminalLeaf,
    /// Recurrent leaf at the unroll frontier (would re-enter a deeper slice).
    FrontierLeaf,
}

#[derive(Debug, Clone)]
pub struct UNode {
    pub id: SitId,
    /// Slice the node acts in: a recurrent leaf of slice `k` is the entry
    /// situation of slice `k + 1` and is stored with slice `k + 1`.
    pub slice: i32,
    /// Node in the generating tree this is a copy of (invariant tree for
    /// slice -1, slice tree otherwise).
    pub within: NodeId,
    pub parent: Option<(usize, Label)>,
    pub children: Vec<(Label, usize)>,
    pub kind: UNodeKind,
}

/// Finite prefix of the infinite tree spanned by a `TogSpec`.
#[derive(Debug, Clone)]
pub struct Unrolled {
    pub nodes: Vec<UNode>,
    index: BTreeMap<SitId, usize>,
}

impl Unrolled {
    pub fn root(&self) -> usize {
        0
    }

    pub fn by_id(&self, id: &SitId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn situations(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&n| self.nodes[n].kind == UNodeKind::Situation)
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&n| self.nodes[n].kind != UNodeKind::Situation)
    }

    /// Labels along the path from the global root.
    pub fn full_path(&self, node: usize) -> &[Label] {
        &self.nodes[node].id.path
    }

    /// Within-slice depth: distance from the entry situation of the slice.
    pub fn within_depth(&self, node: usize, tog: &TogSpec) -> usize {
        let n = &self.nodes[node];
        if n.slice < 0 {
            tog.t_minus1.as_ref().map(|t| t.depth(n.within)).unwrap_or(0)
        } else {
            tog.t_slice.depth(n.within)
        }
    }
}

/// Unfolds the generator over `depth` time-slices (slices `0 .. depth-1`),
/// preceded by the invariant tree when present. Vertex identifiers are
/// deterministic functions of slice index and event path, so prefixes of
/// deeper unrolls coincide node-for-node with shallower ones.
pub fn unroll_tog(tog: &TogSpec, depth: usize) -> Result<Unrolled, TogError> {
    if depth == 0 {
        return Err(TogError::ZeroDepth);
    }
    tog.validate()?;

    let mut nodes: Vec<UNode> = Vec::new();
    let mut index = BTreeMap::new();

    // (unrolled parent, slice, within node, path) work queue; the root is
    // either the invariant-tree root or the first slice-tree copy root.
    let root_slice = if tog.t_minus1.is_some() { -1 } else { 0 };
    nodes.push(UNode {
        id: SitId::new(root_slice, Vec::new()),
        slice: root_slice,
        within: EventTree::ROOT,
        parent: None,
        children: Vec::new(),
        kind: UNodeKind::Situation,
    });
    index.insert(nodes[0].id.clone(), 0);

    let mut stack = vec![0usize];
    while let Some(at) = stack.pop() {
        let (slice, within, path) = {
            let n = &nodes[at];
            (n.slice, n.within, n.id.path.clone())
        };
        let tree = if slice < 0 { tog.t_minus1.as_ref().unwrap() } else { &tog.t_slice };
        for (label, child) in tree.children(within).to_vec() {
            let mut cpath = path.clone();
            cpath.push(label.clone());
            let (cslice, cwithin, kind) = classify_child(tog, slice, child, depth);
            let cid = SitId::new(cslice, cpath);
            let idx = nodes.len();
            nodes.push(UNode {
                id: cid.clone(),
                slice: cslice,
                within: cwithin,
                parent: Some((at, label.clone())),
                children: Vec::new(),
                kind,
            });
            index.insert(cid, idx);
            nodes[at].children.push((label, idx));
            if kind == UNodeKind::Situation {
                stack.push(idx);
            }
        }
    }
    Ok(Unrolled { nodes, index })
}

/// Decides what a generating-tree child becomes in the unroll: a same-slice
/// situation, the entry situation of the next slice, or a leaf.
fn classify_child(tog: &TogSpec, slice: i32, child: NodeId, depth: usize) -> (i32, NodeId, UNodeKind) {
    let tree = if slice < 0 { tog.t_minus1.as_ref().unwrap() } else { &tog.t_slice };
    if !tree.is_leaf(child) {
        return (slice, child, UNodeKind::Situation);
    }
    let re_enters = if slice < 0 {
        true
    } else {
        tree.node(child).leaf_kind == Some(LeafKind::Recurrent)
    };
    if !re_enters {
        return (slice, child, UNodeKind::TerminalLeaf);
    }
    let next = slice + 1;
    if next >= depth as i32 {
        // Frontier: stays a leaf of the finite prefix but is recorded in the
        // slice it would have entered.
        (next, EventTree::ROOT, UNodeKind::FrontierLeaf)
    } else {
        (next, EventTree::ROOT, UNodeKind::Situation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level_slice() -> EventTree {
        // a/b then each with stop (terminal) or go (recurrent)
        let mut t = EventTree::new();
        for v in ["a", "b"] {
            let s = t.add_child(EventTree::ROOT, v);
            let stop = t.add_child(s, "stop");
            t.set_leaf_kind(stop, LeafKind::Terminal);
            let go = t.add_child(s, "go");
            t.set_leaf_kind(go, LeafKind::Recurrent);
        }
        t
    }

    #[test]
    fn depth_one_is_the_slice_tree() {
        let tog = TogSpec::new(None, two_level_slice());
        let u = unroll_tog(&tog, 1).unwrap();
        assert_eq!(u.situations().count(), 3);
        assert_eq!(u.leaves().count(), 4);
    }

    #[test]
    fn zero_depth_rejected() {
        let tog = TogSpec::new(None, two_level_slice());
        assert_eq!(unroll_tog(&tog, 0).unwrap_err(), TogError::ZeroDepth);
    }

    #[test]
    fn no_recurrent_leaf_rejected() {
        let mut t = EventTree::new();
        let a = t.add_child(EventTree::ROOT, "a");
        t.set_leaf_kind(a, LeafKind::Terminal);
        let tog = TogSpec::new(None, t);
        assert_eq!(unroll_tog(&tog, 2).unwrap_err(), TogError::NoRecurrentLeaf);
    }

    #[test]
    fn sit_id_round_trip() {
        let id = SitId::new(2, vec!["a".into(), "go".into()]);
        let s: String = id.clone().into();
        assert_eq!(s, "s2:a.go");
        assert_eq!(SitId::try_from(s).unwrap(), id);
    }
}
