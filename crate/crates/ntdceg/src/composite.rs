//! Composite model construction from independently elicited panels.
//!
//! Each expert panel owns a subset of the invariant-tree leaves and supplies
//! a staged prefix over the shared per-slice tree. Merging installs every
//! panel staging under its leaves, namespaces the stage identifiers, and
//! unions the stage pairs of the declared colour agreement. Probabilities of
//! merged stages must either be declared explicitly (the joint review of the
//! final algorithm step) or already coincide across panels.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::staging::{validate_staging, ProcessVar, Stage, StagedTreePrefix, StageId, VarBindings};
use crate::model::tog::{SitId, TogSpec};
use crate::model::tree::{validate_event_tree, EventTree, Label};

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub id: String,
    /// Invariant-tree leaf paths owned by this panel.
    pub leaves: Vec<Vec<Label>>,
    pub prefix: StagedTreePrefix,
}

/// One agreed cross-panel stage merge; `replacement` carries the jointly
/// reviewed probability vector (indexed by the first stage's label order).
#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub a: (String, StageId),
    pub b: (String, StageId),
    pub replacement: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergePlan {
    pub name: String,
    pub t_minus1: EventTree,
    pub t_minus1_stages: BTreeMap<StageId, Stage>,
    pub t_minus1_assignment: BTreeMap<SitId, StageId>,
    pub panels: Vec<Panel>,
    pub agreements: Vec<Agreement>,
}

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("merge plan has no panels")]
    NoPanels,
    #[error("panels disagree on the model order")]
    HorizonMismatch,
    #[error("panel {0} uses a different per-slice tree")]
    SliceTreeMismatch(String),
    #[error("panel {0} carries its own invariant tree; unit typing belongs to the plan")]
    PanelHasInvariantTree(String),
    #[error("panel {panel} staging invalid: {detail}")]
    PanelInvalid { panel: String, detail: String },
    #[error("invariant tree invalid: {0}")]
    InvariantTreeInvalid(String),
    #[error("panel leaf sets do not partition the invariant-tree leaves: {0}")]
    LeavesNotPartition(String),
    #[error("agreement names unknown panel {0}")]
    UnknownPanel(String),
    #[error("agreement names unknown stage {stage} of panel {panel}")]
    UnknownStage { panel: String, stage: StageId },
    #[error("agreement pair {a} / {b} joins stages of different arity")]
    ArityMismatch { a: String, b: String },
    #[error("agreement pair {a} / {b} joins stages with different label sets")]
    LabelSetMismatch { a: String, b: String },
    #[error("agreement pair {a} / {b}: probabilities disagree and no replacement vector was declared")]
    ProbabilityConflict { a: String, b: String },
    #[error("replacement vector for {0} has the wrong length")]
    ReplacementLength(String),
    #[error("merged staging failed validation: {0}")]
    CompositeInvalid(String),
}

fn scoped(panel: &str, stage: &str) -> String {
    format!("{panel}/{stage}")
}

/// Runs the automated tail of the composite algorithm: install panel
/// stagings on their invariant-tree leaves, merge agreed stage pairs, and
/// return one staged prefix ready for graph construction.
pub fn merge_panels(plan: &MergePlan, tol: f64) -> Result<StagedTreePrefix, MergeError> {
    let Some(first) = plan.panels.first() else {
        return Err(MergeError::NoPanels);
    };
    let horizon = first.prefix.horizon;
    for p in &plan.panels {
        if p.prefix.horizon != horizon {
            return Err(MergeError::HorizonMismatch);
        }
        if p.prefix.tog.t_minus1.is_some() {
            return Err(MergeError::PanelHasInvariantTree(p.id.clone()));
        }
        if p.prefix.tog.t_slice != first.prefix.tog.t_slice {
            return Err(MergeError::SliceTreeMismatch(p.id.clone()));
        }
        let report = validate_staging(&p.prefix, tol);
        if !report.ok() {
            return Err(MergeError::PanelInvalid {
                panel: p.id.clone(),
                detail: report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
            });
        }
    }

    let inv_report = validate_event_tree(&plan.t_minus1, false);
    if !inv_report.ok() {
        return Err(MergeError::InvariantTreeInvalid(
            inv_report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
        ));
    }
    let all_leaves: Vec<Vec<Label>> = plan
        .t_minus1
        .leaves()
        .into_iter()
        .map(|l| plan.t_minus1.path(l))
        .collect();
    let mut claimed: BTreeMap<Vec<Label>, &str> = BTreeMap::new();
    for p in &plan.panels {
        for leaf in &p.leaves {
            if !all_leaves.contains(leaf) {
                return Err(MergeError::LeavesNotPartition(format!(
                    "{} is not a leaf of the invariant tree",
                    leaf.join(".")
                )));
            }
            if let Some(other) = claimed.insert(leaf.clone(), &p.id) {
                return Err(MergeError::LeavesNotPartition(format!(
                    "leaf {} claimed by both {} and {}",
                    leaf.join("."),
                    other,
                    p.id
                )));
            }
        }
    }
    for leaf in &all_leaves {
        if !claimed.contains_key(leaf) {
            return Err(MergeError::LeavesNotPartition(format!("leaf {} is unowned", leaf.join("."))));
        }
    }

    // Union agreed stage pairs; the merged identifier is the sorted join of
    // the scoped names so that panel and agreement order do not matter.
    let panel_by_id: BTreeMap<&str, &Panel> = plan.panels.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut class_of: BTreeMap<String, usize> = BTreeMap::new();
    let mut classes: Vec<Vec<String>> = Vec::new();
    let mut replacements: Vec<Option<Vec<f64>>> = Vec::new();
    for agr in &plan.agreements {
        for (panel, stage) in [&agr.a, &agr.b] {
            let p = panel_by_id
                .get(panel.as_str())
                .ok_or_else(|| MergeError::UnknownPanel(panel.clone()))?;
            if !p.prefix.stages.contains_key(stage) {
                return Err(MergeError::UnknownStage { panel: panel.clone(), stage: stage.clone() });
            }
        }
        let (a, b) = (scoped(&agr.a.0, &agr.a.1), scoped(&agr.b.0, &agr.b.1));
        let ca = class_of.get(&a).copied();
        let cb = class_of.get(&b).copied();
        let class = match (ca, cb) {
            (None, None) => {
                classes.push(vec![a.clone(), b.clone()]);
                replacements.push(None);
                classes.len() - 1
            }
            (Some(c), None) => {
                classes[c].push(b.clone());
                c
            }
            (None, Some(c)) => {
                classes[c].push(a.clone());
                c
            }
            (Some(c1), Some(c2)) => {
                if c1 != c2 {
                    let moved = std::mem::take(&mut classes[c2]);
                    for m in &moved {
                        class_of.insert(m.clone(), c1);
                    }
                    classes[c1].extend(moved);
                    if replacements[c1].is_none() {
                        replacements[c1] = replacements[c2].take();
                    }
                }
                c1
            }
        };
        class_of.insert(a, class);
        class_of.insert(b, class);
        if let Some(r) = &agr.replacement {
            replacements[class] = Some(r.clone());
        }
    }

    // Stage table: invariant stages as declared, panel stages scoped, agreed
    // classes collapsed under a canonical merged name.
    let mut stages: BTreeMap<StageId, Stage> = plan.t_minus1_stages.clone();
    let mut rename: BTreeMap<String, String> = BTreeMap::new();
    let scoped_stage = |scoped_id: &str| -> &Stage {
        let (panel, stage) = scoped_id.split_once('/').unwrap();
        &panel_by_id[panel].prefix.stages[stage]
    };
    for class_nr in 0..classes.len() {
        let mut members = classes[class_nr].clone();
        if members.is_empty() {
            continue;
        }
        members.sort();
        members.dedup();
        let merged_id = members.join("+");
        let base = scoped_stage(&members[0]).clone();
        let mut base_sorted = base.label_order.clone();
        base_sorted.sort();
        for m in &members[1..] {
            let other = scoped_stage(m);
            if other.label_order.len() != base.label_order.len() {
                return Err(MergeError::ArityMismatch { a: members[0].clone(), b: m.clone() });
            }
            let mut other_sorted = other.label_order.clone();
            other_sorted.sort();
            if other_sorted != base_sorted {
                return Err(MergeError::LabelSetMismatch { a: members[0].clone(), b: m.clone() });
            }
        }
        let probs = match &replacements[class_nr] {
            Some(r) => {
                if r.len() != base.label_order.len() {
                    return Err(MergeError::ReplacementLength(merged_id.clone()));
                }
                r.clone()
            }
            None => {
                // All members must already agree, label by label.
                for m in &members[1..] {
                    let other = scoped_stage(m);
                    for (k, label) in base.label_order.iter().enumerate() {
                        let pos = other.label_order.iter().position(|l| l == label).unwrap();
                        if (other.probs[pos] - base.probs[k]).abs() > tol {
                            return Err(MergeError::ProbabilityConflict {
                                a: members[0].clone(),
                                b: m.clone(),
                            });
                        }
                    }
                }
                base.probs.clone()
            }
        };
        for m in &members {
            rename.insert(m.clone(), merged_id.clone());
        }
        stages.insert(
            merged_id,
            Stage { label_order: base.label_order, probs, bijections: BTreeMap::new() },
        );
    }

    let mut assignment: BTreeMap<SitId, StageId> = plan.t_minus1_assignment.clone();
    for p in &plan.panels {
        for (raw_id, stage) in &p.prefix.stages {
            let scoped_id = scoped(&p.id, raw_id);
            if rename.contains_key(&scoped_id) {
                continue;
            }
            // Re-key per-situation bijections onto every owned leaf copy.
            let mut bijections = BTreeMap::new();
            for (sit, map) in &stage.bijections {
                for leaf in &p.leaves {
                    let mut path = leaf.clone();
                    path.extend(sit.path.iter().cloned());
                    bijections.insert(SitId::new(sit.slice, path), map.clone());
                }
            }
            stages.insert(
                scoped_id,
                Stage { label_order: stage.label_order.clone(), probs: stage.probs.clone(), bijections },
            );
        }
        for leaf in &p.leaves {
            for (sit, stage) in &p.prefix.assignment {
                let mut path = leaf.clone();
                path.extend(sit.path.iter().cloned());
                let scoped_id = scoped(&p.id, stage);
                let id = rename.get(&scoped_id).cloned().unwrap_or(scoped_id);
                assignment.insert(SitId::new(sit.slice, path), id);
            }
        }
    }

    let variables = composite_variables(plan);
    let composite = StagedTreePrefix {
        name: plan.name.clone(),
        tog: TogSpec::new(Some(plan.t_minus1.clone()), first.prefix.tog.t_slice.clone()),
        horizon,
        stages,
        assignment,
        variables,
    };
    let report = validate_staging(&composite, tol);
    if !report.ok() {
        return Err(MergeError::CompositeInvalid(
            report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
        ));
    }
    Ok(composite)
}

/// Slice-variable bindings survive the merge when every panel declares the
/// same ones; invariant variables are read off the invariant-tree levels
/// only if they look like a product space (uniform level arity and labels).
fn composite_variables(plan: &MergePlan) -> Option<VarBindings> {
    let first = plan.panels.first()?.prefix.variables.clone()?;
    for p in &plan.panels {
        match &p.prefix.variables {
            Some(v) if v.slice == first.slice => {}
            _ => return None,
        }
    }
    // Infer invariant bindings from the tree levels when uniform.
    let tree = &plan.t_minus1;
    let mut invariant: Vec<ProcessVar> = Vec::new();
    let mut level_nodes = vec![EventTree::ROOT];
    let mut level = 0usize;
    while !level_nodes.iter().all(|n| tree.is_leaf(*n)) {
        let mut states: Option<Vec<Label>> = None;
        let mut next = Vec::new();
        for n in &level_nodes {
            let labels: Vec<Label> = tree.children(*n).iter().map(|(l, _)| l.clone()).collect();
            if labels.is_empty() {
                return Some(VarBindings { invariant: Vec::new(), slice: first.slice });
            }
            match &states {
                None => states = Some(labels),
                Some(s) if *s != labels => {
                    return Some(VarBindings { invariant: Vec::new(), slice: first.slice })
                }
                Some(_) => {}
            }
            next.extend(tree.children(*n).iter().map(|(_, c)| *c));
        }
        invariant.push(ProcessVar { name: format!("Z{level}"), states: states.unwrap() });
        level += 1;
        level_nodes = next;
    }
    Some(VarBindings { invariant, slice: first.slice })
}
