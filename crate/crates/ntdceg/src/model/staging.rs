//! Staged tree prefixes: stage partitions with primitive probabilities over
//! the finite unroll of a periodic tree.
//!
//! A prefix covers slices `-1 .. N` (the invariant tree plus `N + 1` slice
//! copies). The staging of the last two slices must be a transported copy of
//! one homogeneous template keyed by unit type, the last `N - 1` slice
//! paths, and the within-slice node; that template then defines the staging
//! of every deeper slice.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tog::{unroll_tog, SitId, TogError, TogSpec, Unrolled};
use super::tree::{Label, NodeId};

pub type StageId = String;

/// One stage: a probability vector over a canonical label order, plus
/// optional per-situation bijections mapping canonical labels to the actual
/// edge labels of that situation (identity when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub label_order: Vec<Label>,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bijections: BTreeMap<SitId, BTreeMap<Label, Label>>,
}

impl Stage {
    pub fn new(label_order: &[&str], probs: &[f64]) -> Self {
        Stage {
            label_order: label_order.iter().map(|l| l.to_string()).collect(),
            probs: probs.to_vec(),
            bijections: BTreeMap::new(),
        }
    }

    /// Actual edge labels of a member situation, in canonical order.
    pub fn actual_labels(&self, sit: &SitId) -> Vec<Label> {
        match self.bijections.get(sit) {
            Some(map) => self
                .label_order
                .iter()
                .map(|l| map.get(l).cloned().unwrap_or_else(|| l.clone()))
                .collect(),
            None => self.label_order.clone(),
        }
    }

    /// Probability of the member's edge carrying `actual` as its label.
    pub fn prob_of(&self, sit: &SitId, actual: &str) -> Option<f64> {
        self.actual_labels(sit)
            .iter()
            .position(|l| l == actual)
            .map(|k| self.probs[k])
    }

    /// Labelled law for any member carrying the given edge-label set.
    /// Validation guarantees members with one label set share a bijection,
    /// so the law extends to situations beyond the finite prefix.
    pub fn law_for(&self, labels: &std::collections::BTreeSet<Label>) -> Option<BTreeMap<Label, f64>> {
        for map in self.bijections.values() {
            let actual: Vec<Label> = self
                .label_order
                .iter()
                .map(|l| map.get(l).cloned().unwrap_or_else(|| l.clone()))
                .collect();
            if actual.iter().cloned().collect::<std::collections::BTreeSet<_>>() == *labels {
                return Some(actual.into_iter().zip(self.probs.iter().copied()).collect());
            }
        }
        let identity: std::collections::BTreeSet<Label> = self.label_order.iter().cloned().collect();
        if identity == *labels {
            return Some(
                self.label_order
                    .iter()
                    .cloned()
                    .zip(self.probs.iter().copied())
                    .collect(),
            );
        }
        None
    }
}

/// Named process variables bound to tree levels of a stratified model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessVar {
    pub name: String,
    pub states: Vec<Label>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarBindings {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub invariant: Vec<ProcessVar>,
    pub slice: Vec<ProcessVar>,
}

/// Finite staged prefix of the infinite periodic staged tree.
#[derive(Debug, Clone, PartialEq)]
pub struct StagedTreePrefix {
    pub name: String,
    pub tog: TogSpec,
    /// Markov order N of the target NT-DCEG; the prefix spans slices 0..N.
    pub horizon: usize,
    pub stages: BTreeMap<StageId, Stage>,
    pub assignment: BTreeMap<SitId, StageId>,
    /// Level-to-variable bindings, present on stratified models.
    pub variables: Option<VarBindings>,
}

impl StagedTreePrefix {
    /// Unrolls the generator over the prefix depth (slices `0 ..= N`).
    pub fn unrolled(&self) -> Result<Unrolled, TogError> {
        unroll_tog(&self.tog, self.horizon + 1)
    }

    pub fn stage_of(&self, sit: &SitId) -> Option<&Stage> {
        self.assignment.get(sit).and_then(|id| self.stages.get(id))
    }
}

/// Key of the homogeneous staging template: unit type (invariant-tree leaf
/// path), the within-slice paths of the last `N - 1` slices, and the
/// within-slice node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct HomogKey {
    pub unit: Vec<Label>,
    pub ctx: Vec<Vec<Label>>,
    pub within: NodeId,
}

impl fmt::Display for HomogKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ctx: Vec<String> = self.ctx.iter().map(|p| p.join(".")).collect();
        write!(f, "[{}|{}|node{}]", self.unit.join("."), ctx.join(","), self.within)
    }
}

/// Transportable staging of the time-homogeneous part.
#[derive(Debug, Clone)]
pub struct HomogTemplate {
    map: BTreeMap<HomogKey, StageId>,
}

impl HomogTemplate {
    pub fn stage_id(&self, key: &HomogKey) -> Option<&StageId> {
        self.map.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&HomogKey, &StageId)> {
        self.map.iter()
    }
}

/// Decomposes the root path of an unrolled node into per-slice segments.
/// An edge belongs to the slice of its source, so the segment of slice `k`
/// ends with the recurrent-exit event that enters slice `k + 1`.
pub fn slice_segments(u: &Unrolled, node: usize) -> BTreeMap<i32, Vec<Label>> {
    let mut rev: Vec<(i32, Label)> = Vec::new();
    let mut at = node;
    while let Some((p, ref label)) = u.nodes[at].parent {
        rev.push((u.nodes[p].slice, label.clone()));
        at = p;
    }
    let mut out: BTreeMap<i32, Vec<Label>> = BTreeMap::new();
    for (slice, label) in rev.into_iter().rev() {
        out.entry(slice).or_default().push(label);
    }
    out
}

/// Homogeneous key of a situation at slice `k >= N - 1`.
pub fn homog_key(u: &Unrolled, node: usize, horizon: usize) -> HomogKey {
    let n = &u.nodes[node];
    debug_assert!(n.slice >= horizon as i32 - 1);
    let segments = slice_segments(u, node);
    let unit = segments.get(&-1).cloned().unwrap_or_default();
    let ctx = (n.slice - horizon as i32 + 1..n.slice)
        .map(|k| segments.get(&k).cloned().unwrap_or_default())
        .collect();
    HomogKey { unit, ctx, within: n.within }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum StagingViolation {
    UnassignedSituation { sit: String },
    NotASituation { sit: String },
    UnknownStage { sit: String, stage: StageId },
    UnusedStage { stage: StageId },
    ArityMismatch { stage: StageId, sit: String, expected: usize, got: usize },
    BadBijection { stage: StageId, sit: String, detail: String },
    /// Two members share an edge-label set but declare different bijections,
    /// leaving the labelled distribution of the stage ambiguous.
    AmbiguousBijection { stage: StageId, sits: Vec<String> },
    NotNormalized { stage: StageId, sum: f64 },
    NegativeProbability { stage: StageId },
    ProbabilityLength { stage: StageId, labels: usize, probs: usize },
    /// A stage mixes time-invariant (slice -1) situations with dynamic ones.
    MixesInvariantSlice { stage: StageId },
    /// The staging of slices N-1..N is not a transported copy of a single
    /// homogeneous template.
    HomogeneityConflict { key: String, stages: Vec<StageId> },
    InvalidTree { detail: String },
}

impl fmt::Display for StagingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use StagingViolation::*;
        match self {
            UnassignedSituation { sit } => write!(f, "situation {sit} has no stage"),
            NotASituation { sit } => write!(f, "{sit} is not a situation of the prefix"),
            UnknownStage { sit, stage } => write!(f, "situation {sit} names unknown stage {stage}"),
            UnusedStage { stage } => write!(f, "stage {stage} has no member situations"),
            ArityMismatch { stage, sit, expected, got } => {
                write!(f, "stage {stage}: situation {sit} has {got} edges, stage arity is {expected}")
            }
            BadBijection { stage, sit, detail } => {
                write!(f, "stage {stage}: bijection for {sit} is invalid: {detail}")
            }
            AmbiguousBijection { stage, sits } => {
                write!(f, "stage {stage}: members {} share labels but disagree on the bijection", sits.join(", "))
            }
            NotNormalized { stage, sum } => write!(f, "stage {stage}: probabilities sum to {sum}"),
            NegativeProbability { stage } => write!(f, "stage {stage}: negative probability"),
            ProbabilityLength { stage, labels, probs } => {
                write!(f, "stage {stage}: {labels} labels but {probs} probabilities")
            }
            MixesInvariantSlice { stage } => {
                write!(f, "stage {stage} mixes slice -1 situations with dynamic ones")
            }
            HomogeneityConflict { key, stages } => {
                write!(f, "homogeneity violation at {key}: stages {}", stages.join(", "))
            }
            InvalidTree { detail } => write!(f, "underlying tree invalid: {detail}"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StagingReport {
    pub violations: Vec<StagingViolation>,
    pub situation_count: usize,
    pub stage_count: usize,
}

impl StagingReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum StagingError {
    #[error("staging invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tog(#[from] TogError),
}

/// Checks every staged-prefix invariant and reports all violations.
pub fn validate_staging(prefix: &StagedTreePrefix, tol: f64) -> StagingReport {
    let mut violations = Vec::new();

    let unrolled = match prefix.unrolled() {
        Ok(u) => u,
        Err(e) => {
            return StagingReport {
                violations: vec![StagingViolation::InvalidTree { detail: e.to_string() }],
                situation_count: 0,
                stage_count: prefix.stages.len(),
            }
        }
    };

    let situations: BTreeMap<SitId, usize> = unrolled
        .situations()
        .map(|n| (unrolled.nodes[n].id.clone(), n))
        .collect();

    for sit in situations.keys() {
        match prefix.assignment.get(sit) {
            None => violations.push(StagingViolation::UnassignedSituation { sit: sit.to_string() }),
            Some(stage) if !prefix.stages.contains_key(stage) => {
                violations.push(StagingViolation::UnknownStage { sit: sit.to_string(), stage: stage.clone() })
            }
            Some(_) => {}
        }
    }
    for sit in prefix.assignment.keys() {
        if !situations.contains_key(sit) {
            violations.push(StagingViolation::NotASituation { sit: sit.to_string() });
        }
    }

    // Per-stage checks: vector shape, normalization, membership coherence.
    let mut members: BTreeMap<&StageId, Vec<&SitId>> = BTreeMap::new();
    for (sit, stage) in &prefix.assignment {
        if situations.contains_key(sit) {
            members.entry(stage).or_default().push(sit);
        }
    }
    for (stage_id, stage) in &prefix.stages {
        if stage.label_order.len() != stage.probs.len() {
            violations.push(StagingViolation::ProbabilityLength {
                stage: stage_id.clone(),
                labels: stage.label_order.len(),
                probs: stage.probs.len(),
            });
            continue;
        }
        if stage.probs.iter().any(|p| *p < 0.0) {
            violations.push(StagingViolation::NegativeProbability { stage: stage_id.clone() });
        }
        let sum: f64 = stage.probs.iter().sum();
        if (sum - 1.0).abs() > tol {
            violations.push(StagingViolation::NotNormalized { stage: stage_id.clone(), sum });
        }

        let member_sits = members.get(stage_id).cloned().unwrap_or_default();
        if member_sits.is_empty() {
            violations.push(StagingViolation::UnusedStage { stage: stage_id.clone() });
            continue;
        }
        let mut slices = (false, false); // (has slice -1, has slice >= 0)
        let mut by_labelset: BTreeMap<Vec<Label>, Vec<Label>> = BTreeMap::new();
        for sit in &member_sits {
            let node = situations[*sit];
            if unrolled.nodes[node].slice < 0 {
                slices.0 = true;
            } else {
                slices.1 = true;
            }
            let edge_labels: Vec<Label> = unrolled.nodes[node]
                .children
                .iter()
                .map(|(l, _)| l.clone())
                .collect();
            if edge_labels.len() != stage.label_order.len() {
                violations.push(StagingViolation::ArityMismatch {
                    stage: stage_id.clone(),
                    sit: sit.to_string(),
                    expected: stage.label_order.len(),
                    got: edge_labels.len(),
                });
                continue;
            }
            let actual = stage.actual_labels(sit);
            let mut sorted = actual.clone();
            sorted.sort();
            let mut expected = edge_labels.clone();
            expected.sort();
            if sorted != expected || sorted.windows(2).any(|w| w[0] == w[1]) {
                violations.push(StagingViolation::BadBijection {
                    stage: stage_id.clone(),
                    sit: sit.to_string(),
                    detail: format!("maps onto {{{}}}, edges are {{{}}}", actual.join(","), edge_labels.join(",")),
                });
                continue;
            }
            // Members with the same label set must induce the same labelled
            // distribution, otherwise the stage colour is not probability-
            // faithful and the quotient graph would be ill-defined.
            let mut key = edge_labels;
            key.sort();
            match by_labelset.get(&key) {
                None => {
                    by_labelset.insert(key, actual);
                }
                Some(prev) if *prev != actual => {
                    violations.push(StagingViolation::AmbiguousBijection {
                        stage: stage_id.clone(),
                        sits: member_sits.iter().map(|s| s.to_string()).collect(),
                    });
                }
                Some(_) => {}
            }
        }
        if slices.0 && slices.1 {
            violations.push(StagingViolation::MixesInvariantSlice { stage: stage_id.clone() });
        }
    }

    // Homogeneity contract over slices N-1..N, at the level of labelled
    // laws: situations sharing a template key must carry the same labelled
    // distribution. Stage identifiers may still differ (an identity staging
    // is a valid description; it just cannot close into a finite graph).
    if let Err(conflicts) = extract_template(prefix, &unrolled, tol) {
        violations.extend(conflicts);
    }

    StagingReport {
        violations,
        situation_count: situations.len(),
        stage_count: prefix.stages.len(),
    }
}

fn law_of(prefix: &StagedTreePrefix, sit: &SitId) -> Option<BTreeMap<Label, f64>> {
    let stage = prefix.stage_of(sit)?;
    Some(
        stage
            .actual_labels(sit)
            .into_iter()
            .zip(stage.probs.iter().copied())
            .collect(),
    )
}

fn laws_equal(a: &BTreeMap<Label, f64>, b: &BTreeMap<Label, f64>, tol: f64) -> bool {
    a.len() == b.len() && a.iter().all(|(l, p)| b.get(l).is_some_and(|q| (p - q).abs() <= tol))
}

/// Reads the homogeneous staging template off slices `N-1` and `N`.
///
/// Each key maps to the smallest stage identifier seen there; a key whose
/// situations disagree on the labelled law is a homogeneity violation.
pub fn extract_template(
    prefix: &StagedTreePrefix,
    unrolled: &Unrolled,
    tol: f64,
) -> Result<HomogTemplate, Vec<StagingViolation>> {
    let boundary = prefix.horizon as i32 - 1;
    let mut map: BTreeMap<HomogKey, StageId> = BTreeMap::new();
    let mut laws: BTreeMap<HomogKey, BTreeMap<Label, f64>> = BTreeMap::new();
    let mut conflicts: BTreeMap<HomogKey, Vec<StageId>> = BTreeMap::new();
    for n in unrolled.situations() {
        if unrolled.nodes[n].slice < boundary {
            continue;
        }
        let sit = &unrolled.nodes[n].id;
        let (Some(stage), Some(law)) = (prefix.assignment.get(sit), law_of(prefix, sit)) else {
            continue;
        };
        let key = homog_key(unrolled, n, prefix.horizon);
        match laws.get(&key) {
            None => {
                laws.insert(key.clone(), law);
                map.insert(key, stage.clone());
            }
            Some(existing_law) => {
                if !laws_equal(existing_law, &law, tol) {
                    let entry =
                        conflicts.entry(key.clone()).or_insert_with(|| vec![map[&key].clone()]);
                    if !entry.contains(stage) {
                        entry.push(stage.clone());
                    }
                } else if stage < &map[&key] {
                    map.insert(key.clone(), stage.clone());
                }
            }
        }
    }
    if conflicts.is_empty() {
        Ok(HomogTemplate { map })
    } else {
        Err(conflicts
            .into_iter()
            .map(|(key, stages)| StagingViolation::HomogeneityConflict { key: key.to_string(), stages })
            .collect())
    }
}

/// Strict variant used by the quotient-graph builders: the stage
/// *identifier* assignment itself must be transportable, since identifiers
/// are the colours the position refinement compares.
pub fn extract_id_template(
    prefix: &StagedTreePrefix,
    unrolled: &Unrolled,
) -> Result<HomogTemplate, Vec<StagingViolation>> {
    let boundary = prefix.horizon as i32 - 1;
    let mut map: BTreeMap<HomogKey, StageId> = BTreeMap::new();
    let mut conflicts: BTreeMap<HomogKey, Vec<StageId>> = BTreeMap::new();
    for n in unrolled.situations() {
        if unrolled.nodes[n].slice < boundary {
            continue;
        }
        let Some(stage) = prefix.assignment.get(&unrolled.nodes[n].id) else {
            continue;
        };
        let key = homog_key(unrolled, n, prefix.horizon);
        match map.get(&key) {
            None => {
                map.insert(key, stage.clone());
            }
            Some(existing) if existing != stage => {
                let entry = conflicts.entry(key.clone()).or_insert_with(|| vec![map[&key].clone()]);
                if !entry.contains(stage) {
                    entry.push(stage.clone());
                }
            }
            Some(_) => {}
        }
    }
    if conflicts.is_empty() {
        Ok(HomogTemplate { map })
    } else {
        Err(conflicts
            .into_iter()
            .map(|(key, stages)| StagingViolation::HomogeneityConflict { key: key.to_string(), stages })
            .collect())
    }
}

/// Validates and compiles in one step for operations that need a hard
/// error. The returned template carries law-representative stage ids,
/// suitable for probability lookups.
pub fn require_valid(prefix: &StagedTreePrefix, tol: f64) -> Result<(Unrolled, HomogTemplate), StagingError> {
    let report = validate_staging(prefix, tol);
    if !report.ok() {
        let details: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        return Err(StagingError::Invalid(details.join("; ")));
    }
    let unrolled = prefix.unrolled()?;
    let template = extract_template(prefix, &unrolled, tol)
        .map_err(|v| StagingError::Invalid(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")))?;
    Ok((unrolled, template))
}

/// Like `require_valid`, but demanding identifier-level transportability.
pub fn require_buildable(
    prefix: &StagedTreePrefix,
    tol: f64,
) -> Result<(Unrolled, HomogTemplate), StagingError> {
    let (unrolled, _) = require_valid(prefix, tol)?;
    let template = extract_id_template(prefix, &unrolled).map_err(|v| {
        StagingError::Invalid(format!(
            "stage identifiers are not time-transportable: {}",
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
        ))
    })?;
    Ok((unrolled, template))
}

/// Assigns every situation its own stage, copying per-situation probability
/// vectors. Used by tests and the staging-identity property.
pub fn identity_staging(
    name: &str,
    tog: TogSpec,
    horizon: usize,
    probs_for: impl Fn(&SitId, &[Label]) -> Vec<f64>,
) -> Result<StagedTreePrefix, TogError> {
    let unrolled = unroll_tog(&tog, horizon + 1)?;
    let mut stages = BTreeMap::new();
    let mut assignment = BTreeMap::new();
    for n in unrolled.situations() {
        let id = unrolled.nodes[n].id.clone();
        let labels: Vec<Label> = unrolled.nodes[n].children.iter().map(|(l, _)| l.clone()).collect();
        let probs = probs_for(&id, &labels);
        let stage_id = format!("st:{id}");
        stages.insert(
            stage_id.clone(),
            Stage {
                label_order: labels,
                probs,
                bijections: BTreeMap::new(),
            },
        );
        assignment.insert(id, stage_id);
    }
    Ok(StagedTreePrefix {
        name: name.to_string(),
        tog,
        horizon,
        stages,
        assignment,
        variables: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tree::{EventTree, LeafKind};

    fn tiny_tog() -> TogSpec {
        let mut t = EventTree::new();
        let a = t.add_child(EventTree::ROOT, "a");
        t.set_leaf_kind(a, LeafKind::Recurrent);
        let b = t.add_child(EventTree::ROOT, "b");
        t.set_leaf_kind(b, LeafKind::Terminal);
        TogSpec::new(None, t)
    }

    #[test]
    fn identity_staging_validates() {
        let prefix = identity_staging("tiny", tiny_tog(), 2, |_, labels| {
            vec![1.0 / labels.len() as f64; labels.len()]
        })
        .unwrap();
        let report = validate_staging(&prefix, 1e-9);
        assert!(report.ok(), "{:?}", report.violations);
    }

    #[test]
    fn unnormalized_stage_reported() {
        let mut prefix = identity_staging("tiny", tiny_tog(), 1, |_, labels| {
            vec![1.0 / labels.len() as f64; labels.len()]
        })
        .unwrap();
        let first = prefix.stages.keys().next().unwrap().clone();
        prefix.stages.get_mut(&first).unwrap().probs = vec![0.5, 0.6];
        let report = validate_staging(&prefix, 1e-9);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, StagingViolation::NotNormalized { .. })));
    }

    #[test]
    fn arity_mismatch_reported() {
        // Two situations with different arities forced into one stage.
        let mut slice = EventTree::new();
        let a = slice.add_child(EventTree::ROOT, "a");
        let b = slice.add_child(EventTree::ROOT, "b");
        for (n, kinds) in [(a, vec!["x", "y"]), (b, vec!["x", "y", "z"])] {
            for k in kinds {
                let c = slice.add_child(n, k);
                slice.set_leaf_kind(c, LeafKind::Recurrent);
            }
        }
        let tog = TogSpec::new(None, slice);
        let mut prefix = identity_staging("arity", tog, 1, |_, labels| {
            vec![1.0 / labels.len() as f64; labels.len()]
        })
        .unwrap();
        // Redirect the three-edge situation into the two-edge situation's stage.
        let two = SitId::new(0, vec!["a".into()]);
        let three = SitId::new(0, vec!["b".into()]);
        let target = prefix.assignment[&two].clone();
        prefix.assignment.insert(three, target);
        let report = validate_staging(&prefix, 1e-9);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, StagingViolation::ArityMismatch { .. })));
    }
}
