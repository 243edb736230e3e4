//! Finite labelled event trees.
//!
//! An event tree is a rooted directed tree whose edges carry event labels.
//! Non-leaf vertices are situations (states a unit can transition from);
//! leaves either terminate the process or, inside a per-slice tree, mark
//! re-entry into a fresh copy of the slice tree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Event label on a tree edge.
pub type Label = String;

/// Node index inside an [`EventTree`] arena.
pub type NodeId = usize;

/// Classification of a per-slice tree leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeafKind {
    /// The unit is absorbed; the path ends here.
    Terminal,
    /// The unit re-enters the slice tree at the start of the next slice.
    Recurrent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub parent: Option<NodeId>,
    /// Label of the edge from the parent; `None` only at the root.
    pub label: Option<Label>,
    /// Children ordered by label (duplicates allowed so that invalid trees
    /// can be represented and reported).
    pub children: Vec<(Label, NodeId)>,
    pub leaf_kind: Option<LeafKind>,
}

/// Rooted labelled tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone)]
pub struct EventTree {
    nodes: Vec<TreeNode>,
}

/// Equality is structural (labels, shapes, leaf flags), not sensitive to
/// arena insertion order.
impl PartialEq for EventTree {
    fn eq(&self, other: &Self) -> bool {
        fn eq_at(a: &EventTree, an: NodeId, b: &EventTree, bn: NodeId) -> bool {
            let (na, nb) = (a.node(an), b.node(bn));
            na.leaf_kind == nb.leaf_kind
                && na.children.len() == nb.children.len()
                && na
                    .children
                    .iter()
                    .zip(&nb.children)
                    .all(|((la, ca), (lb, cb))| la == lb && eq_at(a, *ca, b, *cb))
        }
        eq_at(self, Self::ROOT, other, Self::ROOT)
    }
}

impl Eq for EventTree {}

impl Default for EventTree {
    fn default() -> Self {
        Self::new()
    }
}

impl EventTree {
    /// Tree consisting of a single root vertex.
    pub fn new() -> Self {
        EventTree {
            nodes: vec![TreeNode {
                parent: None,
                label: None,
                children: Vec::new(),
                leaf_kind: None,
            }],
        }
    }

    pub const ROOT: NodeId = 0;

    /// Adds a child under `parent` with the given edge label, keeping the
    /// sibling list ordered by label.
    pub fn add_child(&mut self, parent: NodeId, label: impl Into<Label>) -> NodeId {
        let label = label.into();
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            parent: Some(parent),
            label: Some(label.clone()),
            children: Vec::new(),
            leaf_kind: None,
        });
        let siblings = &mut self.nodes[parent].children;
        let at = siblings
            .iter()
            .position(|(l, _)| *l > label)
            .unwrap_or(siblings.len());
        siblings.insert(at, (label, id));
        id
    }

    /// Adds the whole path of labels below `from`, reusing existing edges.
    pub fn add_path(&mut self, from: NodeId, labels: &[&str]) -> NodeId {
        let mut at = from;
        for l in labels {
            at = match self.child(at, l) {
                Some(c) => c,
                None => self.add_child(at, *l),
            };
        }
        at
    }

    pub fn set_leaf_kind(&mut self, node: NodeId, kind: LeafKind) {
        self.nodes[node].leaf_kind = Some(kind);
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].children.is_empty()
    }

    pub fn child(&self, id: NodeId, label: &str) -> Option<NodeId> {
        self.nodes[id]
            .children
            .iter()
            .find(|(l, _)| l == label)
            .map(|&(_, c)| c)
    }

    pub fn children(&self, id: NodeId) -> &[(Label, NodeId)] {
        &self.nodes[id].children
    }

    /// Labels along the root-to-`id` path.
    pub fn path(&self, id: NodeId) -> Vec<Label> {
        let mut out = Vec::new();
        let mut at = id;
        while let Some(p) = self.nodes[at].parent {
            out.push(self.nodes[at].label.clone().unwrap());
            at = p;
        }
        out.reverse();
        out
    }

    /// Resolves a label path from the root; `None` if absent.
    pub fn at_path(&self, path: &[Label]) -> Option<NodeId> {
        let mut at = Self::ROOT;
        for l in path {
            at = self.child(at, l)?;
        }
        Some(at)
    }

    pub fn depth(&self, id: NodeId) -> usize {
        let mut d = 0;
        let mut at = id;
        while let Some(p) = self.nodes[at].parent {
            d += 1;
            at = p;
        }
        d
    }

    /// All node ids in a deterministic (preorder, label-sorted) order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![Self::ROOT];
        while let Some(n) = stack.pop() {
            out.push(n);
            for (_, c) in self.nodes[n].children.iter().rev() {
                stack.push(*c);
            }
        }
        out
    }

    pub fn situations(&self) -> Vec<NodeId> {
        self.preorder().into_iter().filter(|&n| !self.is_leaf(n)).collect()
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.preorder().into_iter().filter(|&n| self.is_leaf(n)).collect()
    }

    pub fn recurrent_leaves(&self) -> Vec<NodeId> {
        self.leaves()
            .into_iter()
            .filter(|&n| self.nodes[n].leaf_kind == Some(LeafKind::Recurrent))
            .collect()
    }

    pub fn terminal_leaves(&self) -> Vec<NodeId> {
        self.leaves()
            .into_iter()
            .filter(|&n| self.nodes[n].leaf_kind == Some(LeafKind::Terminal))
            .collect()
    }

    /// Builds a tree from the nested-map form used in model files.
    ///
    /// Keys are edge labels; a value is either a nested map or one of the
    /// leaf markers `"leaf"`, `"terminal"`, `"recurrent"`.
    pub fn from_nested(value: &NestedTree) -> EventTree {
        fn build(tree: &mut EventTree, at: NodeId, value: &NestedTree) {
            match value {
                NestedTree::Leaf(kind) => {
                    if let Some(k) = leaf_kind_of(kind) {
                        tree.set_leaf_kind(at, k);
                    }
                }
                NestedTree::Branch(map) => {
                    for (label, sub) in map {
                        let c = tree.add_child(at, label.clone());
                        build(tree, c, sub);
                    }
                }
            }
        }
        let mut tree = EventTree::new();
        build(&mut tree, EventTree::ROOT, value);
        tree
    }

    pub fn to_nested(&self) -> NestedTree {
        fn emit(tree: &EventTree, at: NodeId) -> NestedTree {
            if tree.is_leaf(at) {
                let marker = match tree.node(at).leaf_kind {
                    Some(LeafKind::Terminal) => "terminal",
                    Some(LeafKind::Recurrent) => "recurrent",
                    None => "leaf",
                };
                NestedTree::Leaf(marker.to_string())
            } else {
                NestedTree::Branch(
                    tree.children(at)
                        .iter()
                        .map(|(l, c)| (l.clone(), emit(tree, *c)))
                        .collect(),
                )
            }
        }
        emit(self, Self::ROOT)
    }
}

fn leaf_kind_of(marker: &str) -> Option<LeafKind> {
    match marker {
        "terminal" => Some(LeafKind::Terminal),
        "recurrent" => Some(LeafKind::Recurrent),
        _ => None,
    }
}

/// Serialized form of an event tree: nested label maps with string leaf
/// markers. `BTreeMap` keeps serialization order canonical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NestedTree {
    Leaf(String),
    Branch(BTreeMap<Label, NestedTree>),
}

/// A single violated tree invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum TreeViolation {
    /// Two sibling edges carry the same label. Fields: vertex path, label.
    DuplicateSiblingLabel { at: Vec<Label>, label: Label },
    /// A leaf of a per-slice tree lacks a terminal/recurrent flag.
    UnflaggedLeaf { at: Vec<Label> },
    /// A non-leaf vertex carries a leaf flag.
    FlaggedSituation { at: Vec<Label> },
}

impl std::fmt::Display for TreeViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TreeViolation::DuplicateSiblingLabel { at, label } => {
                write!(f, "duplicate sibling label {:?} under '{}'", label, at.join("."))
            }
            TreeViolation::UnflaggedLeaf { at } => {
                write!(f, "slice-tree leaf '{}' has no terminal/recurrent flag", at.join("."))
            }
            TreeViolation::FlaggedSituation { at } => {
                write!(f, "non-leaf vertex '{}' carries a leaf flag", at.join("."))
            }
        }
    }
}

/// Validation report for a single event tree.
#[derive(Debug, Clone, Serialize)]
pub struct TreeReport {
    pub violations: Vec<TreeViolation>,
    pub situation_count: usize,
    pub leaf_count: usize,
    pub terminal_leaf_count: usize,
    pub recurrent_leaf_count: usize,
}

impl TreeReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the event-tree invariants.
///
/// Rootedness, connectivity, acyclicity and the single-parent property hold
/// by construction of the arena, so the report concentrates on the label and
/// leaf-flag rules. `slice_tree` switches on the leaf-flag requirements that
/// only apply inside a per-slice tree.
pub fn validate_event_tree(tree: &EventTree, slice_tree: bool) -> TreeReport {
    let mut violations = Vec::new();
    for n in tree.preorder() {
        let node = tree.node(n);
        for w in node.children.windows(2) {
            if w[0].0 == w[1].0 {
                violations.push(TreeViolation::DuplicateSiblingLabel {
                    at: tree.path(n),
                    label: w[0].0.clone(),
                });
            }
        }
        if tree.is_leaf(n) {
            if slice_tree && node.leaf_kind.is_none() {
                violations.push(TreeViolation::UnflaggedLeaf { at: tree.path(n) });
            }
        } else if node.leaf_kind.is_some() {
            violations.push(TreeViolation::FlaggedSituation { at: tree.path(n) });
        }
    }
    let leaves = tree.leaves();
    TreeReport {
        violations,
        situation_count: tree.situations().len(),
        leaf_count: leaves.len(),
        terminal_leaf_count: tree.terminal_leaves().len(),
        recurrent_leaf_count: tree.recurrent_leaves().len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_tree_is_ok() {
        let tree = EventTree::new();
        let report = validate_event_tree(&tree, false);
        assert!(report.ok());
        assert_eq!(report.situation_count, 0);
        assert_eq!(report.leaf_count, 1);
    }

    #[test]
    fn duplicate_sibling_label_reported() {
        let mut tree = EventTree::new();
        tree.add_child(EventTree::ROOT, "a");
        tree.add_child(EventTree::ROOT, "a");
        let report = validate_event_tree(&tree, false);
        assert!(!report.ok());
        assert!(matches!(
            report.violations[0],
            TreeViolation::DuplicateSiblingLabel { .. }
        ));
    }

    #[test]
    fn nested_round_trip() {
        let mut tree = EventTree::new();
        let a = tree.add_child(EventTree::ROOT, "a");
        let b = tree.add_child(EventTree::ROOT, "b");
        tree.set_leaf_kind(b, LeafKind::Terminal);
        let aa = tree.add_child(a, "x");
        tree.set_leaf_kind(aa, LeafKind::Recurrent);
        let nested = tree.to_nested();
        assert_eq!(EventTree::from_nested(&nested), tree);
    }
}
