//! Discrete dynamic Bayesian networks and their conversion into stratified
//! staged prefixes.
//!
//! A DBN here is a conversion source and an oracle, not an inference engine.
//! The conversion builds the product-space slice tree over the chosen
//! variable order (pruned below terminating states), groups situations at
//! each level by the parent configuration of the level's variable, merges
//! level stages across time points whose whole conditional table coincides,
//! and copies the rows as primitive probabilities.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::staging::{slice_segments, ProcessVar, Stage, StagedTreePrefix, VarBindings};
use crate::model::tog::{unroll_tog, TogSpec};
use crate::model::tree::{EventTree, Label, LeafKind};
use crate::sim::{exact_joint, JointTable, SimError};
use crate::SIZE_GUARD;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbnVar {
    pub name: String,
    pub states: Vec<Label>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub terminal: BTreeSet<Label>,
}

/// Parent of a variable: a time-invariant variable, or a slice variable at
/// lag 0 (contemporaneous, earlier in the order) up to lag N-1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParentRef {
    Invariant { invariant: usize },
    Lagged { var: usize, lag: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cpd {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<ParentRef>,
    /// Parent assignment (values in `parents` order, joined keys) -> row.
    pub table: BTreeMap<Vec<Label>, Vec<f64>>,
}

impl Cpd {
    pub fn root(row: Vec<f64>) -> Self {
        let mut table = BTreeMap::new();
        table.insert(Vec::new(), row);
        Cpd { parents: Vec::new(), table }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceModel {
    /// One conditional table per slice variable, in order.
    pub cpds: Vec<Cpd>,
}

/// An N time-slice DBN: initial-slice models for slices `0 .. N-2` and one
/// homogeneous model for every later slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbnSpec {
    pub name: String,
    pub order: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub invariant_vars: Vec<DbnVar>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub invariant_cpds: Vec<Cpd>,
    pub slice_vars: Vec<DbnVar>,
    pub initial: Vec<SliceModel>,
    pub homogeneous: SliceModel,
}

#[derive(Debug, Error)]
pub enum DbnError {
    #[error("order must be at least 1")]
    BadOrder,
    #[error("expected {expected} initial slice models, found {found}")]
    InitialSliceCount { expected: usize, found: usize },
    #[error("variable {0} is empty or duplicated")]
    BadVariable(String),
    #[error("time-invariant variable {0} may not have terminal states")]
    InvariantTerminal(String),
    #[error("slice model for {at} has {found} cpds, expected {expected}")]
    CpdCount { at: String, found: usize, expected: usize },
    #[error("cpd of {var} at {at}: {detail}")]
    BadCpd { var: String, at: String, detail: String },
    #[error("no slice variable escapes termination; the process cannot continue")]
    AllTerminal,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("size guard: about {count} assignments exceed the limit of {max}")]
    SizeGuard { count: usize, max: usize },
}

/// Product-space event tree over an ordered variable list. Branches below a
/// terminating state are pruned; in a per-slice tree the surviving full
/// paths end in recurrent leaves.
pub fn build_variable_tree(vars: &[DbnVar], slice_tree: bool) -> Result<EventTree, DbnError> {
    if vars.is_empty() {
        return Err(DbnError::BadVariable("(empty variable list)".into()));
    }
    let mut tree = EventTree::new();
    let mut frontier = vec![EventTree::ROOT];
    for (level, var) in vars.iter().enumerate() {
        let mut next = Vec::new();
        for node in frontier {
            for state in &var.states {
                let child = tree.add_child(node, state.clone());
                if var.terminal.contains(state) {
                    if slice_tree {
                        tree.set_leaf_kind(child, LeafKind::Terminal);
                    }
                } else if level + 1 == vars.len() {
                    if slice_tree {
                        tree.set_leaf_kind(child, LeafKind::Recurrent);
                    }
                } else {
                    next.push(child);
                }
            }
        }
        frontier = next;
    }
    Ok(tree)
}

fn check_vars(vars: &[DbnVar], invariant: bool) -> Result<(), DbnError> {
    let mut seen = BTreeSet::new();
    for v in vars {
        if v.states.is_empty() || !seen.insert(&v.name) {
            return Err(DbnError::BadVariable(v.name.clone()));
        }
        if !v.terminal.iter().all(|t| v.states.contains(t)) {
            return Err(DbnError::BadVariable(v.name.clone()));
        }
        if invariant && !v.terminal.is_empty() {
            return Err(DbnError::InvariantTerminal(v.name.clone()));
        }
    }
    Ok(())
}

/// Reachable parent configurations of a cpd: every parent value non-terminal
/// (a terminal ancestor absorbs the unit before the variable unfolds).
fn reachable_configs(dbn: &DbnSpec, cpd: &Cpd) -> Vec<Vec<Label>> {
    let mut configs: Vec<Vec<Label>> = vec![Vec::new()];
    for p in &cpd.parents {
        let (states, terminal) = match p {
            ParentRef::Invariant { invariant } => {
                let v = &dbn.invariant_vars[*invariant];
                (&v.states, &v.terminal)
            }
            ParentRef::Lagged { var, .. } => {
                let v = &dbn.slice_vars[*var];
                (&v.states, &v.terminal)
            }
        };
        let mut next = Vec::new();
        for c in &configs {
            for s in states {
                if terminal.contains(s) {
                    continue;
                }
                let mut c2 = c.clone();
                c2.push(s.clone());
                next.push(c2);
            }
        }
        configs = next;
    }
    configs
}

fn check_cpd(dbn: &DbnSpec, var_idx: usize, time: Option<usize>, cpd: &Cpd, tol: f64) -> Result<(), DbnError> {
    let at = match time {
        None => "invariant".to_string(),
        Some(t) if t + 1 >= dbn.order => "homogeneous".to_string(),
        Some(t) => format!("slice {t}"),
    };
    let (var, invariant) = match time {
        None => (&dbn.invariant_vars[var_idx], true),
        Some(_) => (&dbn.slice_vars[var_idx], false),
    };
    let fail = |detail: String| DbnError::BadCpd { var: var.name.clone(), at: at.clone(), detail };
    for p in &cpd.parents {
        match p {
            ParentRef::Invariant { invariant: i } => {
                if *i >= dbn.invariant_vars.len() || (invariant && *i >= var_idx) {
                    return Err(fail(format!("invalid invariant parent {i}")));
                }
            }
            ParentRef::Lagged { var: v, lag } => {
                if invariant {
                    return Err(fail("invariant variables cannot have slice parents".into()));
                }
                if *v >= dbn.slice_vars.len() {
                    return Err(fail(format!("invalid parent index {v}")));
                }
                if *lag == 0 && *v >= var_idx {
                    return Err(fail("contemporaneous parents must be earlier in the order".into()));
                }
                if *lag >= dbn.order {
                    return Err(fail(format!("lag {lag} exceeds the Markov window {}", dbn.order - 1)));
                }
                if let Some(t) = time {
                    if t + 1 < dbn.order && *lag > t {
                        return Err(fail(format!("lag {lag} reaches before slice 0 at slice {t}")));
                    }
                }
            }
        }
    }
    for config in reachable_configs(dbn, cpd) {
        let Some(row) = cpd.table.get(&config) else {
            return Err(fail(format!("missing row for parent configuration ({})", config.join(","))));
        };
        if row.len() != var.states.len() {
            return Err(fail(format!("row for ({}) has wrong length", config.join(","))));
        }
        if row.iter().any(|p| *p < 0.0) {
            return Err(fail("negative probability".into()));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(fail(format!("row for ({}) sums to {sum}", config.join(","))));
        }
    }
    Ok(())
}

pub fn validate_dbn(dbn: &DbnSpec, tol: f64) -> Result<(), DbnError> {
    if dbn.order == 0 {
        return Err(DbnError::BadOrder);
    }
    if dbn.initial.len() != dbn.order - 1 {
        return Err(DbnError::InitialSliceCount { expected: dbn.order - 1, found: dbn.initial.len() });
    }
    check_vars(&dbn.invariant_vars, true)?;
    check_vars(&dbn.slice_vars, false)?;
    if dbn.slice_vars.is_empty() {
        return Err(DbnError::BadVariable("(no slice variables)".into()));
    }
    // The conversion needs at least one full non-terminal path per slice.
    if dbn.slice_vars.iter().any(|v| v.states.iter().all(|s| v.terminal.contains(s))) {
        return Err(DbnError::AllTerminal);
    }
    if dbn.invariant_cpds.len() != dbn.invariant_vars.len() {
        return Err(DbnError::CpdCount {
            at: "invariant".into(),
            found: dbn.invariant_cpds.len(),
            expected: dbn.invariant_vars.len(),
        });
    }
    for (j, cpd) in dbn.invariant_cpds.iter().enumerate() {
        check_cpd(dbn, j, None, cpd, tol)?;
    }
    for (t, sm) in dbn.initial.iter().enumerate() {
        if sm.cpds.len() != dbn.slice_vars.len() {
            return Err(DbnError::CpdCount {
                at: format!("slice {t}"),
                found: sm.cpds.len(),
                expected: dbn.slice_vars.len(),
            });
        }
        for (j, cpd) in sm.cpds.iter().enumerate() {
            check_cpd(dbn, j, Some(t), cpd, tol)?;
        }
    }
    if dbn.homogeneous.cpds.len() != dbn.slice_vars.len() {
        return Err(DbnError::CpdCount {
            at: "homogeneous".into(),
            found: dbn.homogeneous.cpds.len(),
            expected: dbn.slice_vars.len(),
        });
    }
    for (j, cpd) in dbn.homogeneous.cpds.iter().enumerate() {
        check_cpd(dbn, j, Some(dbn.order - 1), cpd, tol)?;
    }
    Ok(())
}

/// Effective conditional table of slice variable `j` at time point `t`
/// (`t >= N-1` resolves to the homogeneous model).
fn cpd_at(dbn: &DbnSpec, j: usize, t: usize) -> &Cpd {
    if t + 1 < dbn.order {
        &dbn.initial[t].cpds[j]
    } else {
        &dbn.homogeneous.cpds[j]
    }
}

fn cpds_equal(a: &Cpd, b: &Cpd, tol: f64) -> bool {
    a.parents == b.parents
        && a.table.len() == b.table.len()
        && a.table.iter().all(|(k, row)| {
            b.table
                .get(k)
                .is_some_and(|r| r.len() == row.len() && r.iter().zip(row).all(|(x, y)| (x - y).abs() <= tol))
        })
}

/// Time-point classes per slice variable: time points sharing the whole
/// conditional table become one stage family (the cross-time merge).
fn time_classes(dbn: &DbnSpec, j: usize, tol: f64) -> Vec<String> {
    // Time points: 0..N-2 then the homogeneous point, encoded "h".
    let points: Vec<usize> = (0..dbn.order).collect(); // N-1 plays the homogeneous role
    let mut labels: Vec<Option<String>> = vec![None; points.len()];
    for i in 0..points.len() {
        if labels[i].is_some() {
            continue;
        }
        let mut members: Vec<String> = vec![point_name(dbn, i)];
        for k in i + 1..points.len() {
            if labels[k].is_none() && cpds_equal(cpd_at(dbn, j, i), cpd_at(dbn, j, k), tol) {
                members.push(point_name(dbn, k));
            }
        }
        let class = members.join("+");
        for k in i..points.len() {
            if labels[k].is_none() && cpds_equal(cpd_at(dbn, j, i), cpd_at(dbn, j, k), tol) {
                labels[k] = Some(class.clone());
            }
        }
    }
    labels.into_iter().map(|l| l.unwrap()).collect()
}

fn point_name(dbn: &DbnSpec, t: usize) -> String {
    if t + 1 >= dbn.order {
        "h".to_string()
    } else {
        format!("t{t}")
    }
}

/// Converts a validated DBN into a stratified staged prefix whose positions
/// support an NT-DCEG depicting every ordered-Markov statement of the DBN.
pub fn dbn_to_sdceg(dbn: &DbnSpec, tol: f64) -> Result<StagedTreePrefix, DbnError> {
    validate_dbn(dbn, tol)?;
    let t_minus1 = if dbn.invariant_vars.is_empty() {
        None
    } else {
        Some(build_variable_tree(&dbn.invariant_vars, false)?)
    };
    let t_slice = build_variable_tree(&dbn.slice_vars, true)?;
    let tog = TogSpec::new(t_minus1, t_slice);

    let classes: Vec<Vec<String>> = (0..dbn.slice_vars.len())
        .map(|j| time_classes(dbn, j, tol))
        .collect();

    let unrolled = unroll_tog(&tog, dbn.order + 1).map_err(SimError::from)?;
    if unrolled.nodes.len() > SIZE_GUARD {
        return Err(DbnError::SizeGuard { count: unrolled.nodes.len(), max: SIZE_GUARD });
    }

    let mut stages: BTreeMap<String, Stage> = BTreeMap::new();
    let mut assignment: BTreeMap<crate::model::tog::SitId, String> = BTreeMap::new();
    for un in unrolled.situations() {
        let node = &unrolled.nodes[un];
        let segments = slice_segments(&unrolled, un);
        let (var, cpd, stage_id) = if node.slice < 0 {
            let level = segments.get(&-1).map(|s| s.len()).unwrap_or(0);
            let var = &dbn.invariant_vars[level];
            let cpd = &dbn.invariant_cpds[level];
            let config = parent_values(dbn, cpd, &segments, -1, level);
            (var, cpd, format!("{}@inv|{}", var.name, config.join(",")))
        } else {
            let t = node.slice as usize;
            let level = segments.get(&node.slice).map(|s| s.len()).unwrap_or(0);
            let var = &dbn.slice_vars[level];
            let cpd = cpd_at(dbn, level, t.min(dbn.order - 1));
            let config = parent_values(dbn, cpd, &segments, node.slice, level);
            let class = &classes[level][t.min(dbn.order - 1)];
            (var, cpd, format!("{}@{}|{}", var.name, class, config.join(",")))
        };
        if !stages.contains_key(&stage_id) {
            let config = stage_id.split('|').nth(1).unwrap();
            let key: Vec<Label> = if config.is_empty() {
                Vec::new()
            } else {
                config.split(',').map(|s| s.to_string()).collect()
            };
            let row = cpd.table[&key].clone();
            stages.insert(
                stage_id.clone(),
                Stage { label_order: var.states.clone(), probs: row, bijections: BTreeMap::new() },
            );
        }
        assignment.insert(node.id.clone(), stage_id);
    }

    let variables = VarBindings {
        invariant: dbn.invariant_vars.iter().map(|v| ProcessVar { name: v.name.clone(), states: v.states.clone() }).collect(),
        slice: dbn.slice_vars.iter().map(|v| ProcessVar { name: v.name.clone(), states: v.states.clone() }).collect(),
    };
    Ok(StagedTreePrefix {
        name: dbn.name.clone(),
        tog,
        horizon: dbn.order,
        stages,
        assignment,
        variables: Some(variables),
    })
}

/// Values of a cpd's parents along the history of a situation where the
/// variable at (`slice`, `level`) unfolds.
fn parent_values(
    dbn: &DbnSpec,
    cpd: &Cpd,
    segments: &BTreeMap<i32, Vec<Label>>,
    slice: i32,
    level: usize,
) -> Vec<Label> {
    let _ = level;
    let _ = dbn;
    cpd.parents
        .iter()
        .map(|p| match p {
            ParentRef::Invariant { invariant } => segments[&-1][*invariant].clone(),
            ParentRef::Lagged { var, lag } => segments[&(slice - *lag as i32)][*var].clone(),
        })
        .collect()
}

/// Exact joint of the DBN over `slices` slices by direct product-of-rows
/// enumeration; terminated assignments are keyed by their truncated paths.
/// This is the DBN-side half of the conversion equivalence oracle.
pub fn dbn_joint(dbn: &DbnSpec, slices: usize, tol: f64) -> Result<JointTable, DbnError> {
    validate_dbn(dbn, tol)?;
    let mut rows: BTreeMap<Vec<Label>, f64> = BTreeMap::new();
    // Each frontier entry: (path, prob, segments so far).
    let mut frontier: Vec<(Vec<Label>, f64, BTreeMap<i32, Vec<Label>>)> =
        vec![(Vec::new(), 1.0, BTreeMap::new())];

    // Invariant variables first.
    for (j, cpd) in dbn.invariant_cpds.iter().enumerate() {
        let mut next = Vec::new();
        for (path, prob, segs) in frontier {
            let config = parent_values(dbn, cpd, &segs, -1, j);
            let row = &cpd.table[&config];
            for (k, state) in dbn.invariant_vars[j].states.iter().enumerate() {
                let mut p2 = path.clone();
                p2.push(state.clone());
                let mut s2 = segs.clone();
                s2.entry(-1).or_default().push(state.clone());
                next.push((p2, prob * row[k], s2));
            }
        }
        frontier = next;
    }

    for t in 0..slices {
        for j in 0..dbn.slice_vars.len() {
            let cpd = cpd_at(dbn, j, t.min(dbn.order - 1));
            let mut next = Vec::new();
            for (path, prob, segs) in frontier {
                let config = parent_values(dbn, cpd, &segs, t as i32, j);
                let row = &cpd.table[&config];
                for (k, state) in dbn.slice_vars[j].states.iter().enumerate() {
                    let mut p2 = path.clone();
                    p2.push(state.clone());
                    if dbn.slice_vars[j].terminal.contains(state) {
                        *rows.entry(p2).or_insert(0.0) += prob * row[k];
                    } else {
                        let mut s2 = segs.clone();
                        s2.entry(t as i32).or_default().push(state.clone());
                        next.push((p2, prob * row[k], s2));
                    }
                }
                if next.len() > SIZE_GUARD {
                    return Err(DbnError::SizeGuard { count: next.len(), max: SIZE_GUARD });
                }
            }
            frontier = next;
        }
    }
    for (path, prob, _) in frontier {
        *rows.entry(path).or_insert(0.0) += prob;
    }
    Ok(JointTable { rows })
}

/// One ordered-Markov statement and its verdict in the model's joint.
#[derive(Debug, Clone, Serialize)]
pub struct CiStatement {
    pub variable: String,
    pub slice: usize,
    pub holds: bool,
    pub max_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CiReport {
    pub statements: Vec<CiStatement>,
    pub ok: bool,
}

/// Verifies every OMP statement of the DBN inside the converted model's
/// joint: each variable, given its parents, is independent of all earlier
/// non-parent coordinates — checked by exhaustive comparison of conditional
/// distributions across histories sharing the parent configuration.
pub fn ci_statements_preserved(
    dbn: &DbnSpec,
    prefix: &StagedTreePrefix,
    slices: usize,
    tol: f64,
) -> Result<CiReport, DbnError> {
    validate_dbn(dbn, tol)?;
    let joint = exact_joint(prefix, slices, tol)?;
    let inv = dbn.invariant_vars.len();
    let per_slice = dbn.slice_vars.len();

    // Conditional distribution of the coordinate at flat position k, given
    // each length-k prefix of an assignment path.
    let dist_at = |k: usize| -> BTreeMap<Vec<Label>, BTreeMap<Label, f64>> {
        let mut acc: BTreeMap<Vec<Label>, BTreeMap<Label, f64>> = BTreeMap::new();
        for (path, prob) in &joint.rows {
            if path.len() <= k {
                continue;
            }
            let prefix_path = path[..k].to_vec();
            *acc.entry(prefix_path).or_default().entry(path[k].clone()).or_insert(0.0) += prob;
        }
        for dist in acc.values_mut() {
            let mass: f64 = dist.values().sum();
            for v in dist.values_mut() {
                *v /= mass;
            }
        }
        acc
    };

    let mut statements = Vec::new();
    for t in 0..slices {
        for j in 0..per_slice {
            let k = inv + t * per_slice + j;
            let cpd = cpd_at(dbn, j, t.min(dbn.order - 1));
            let dists = dist_at(k);
            // Group prefixes by the parent configuration.
            let mut groups: BTreeMap<Vec<Label>, Vec<&BTreeMap<Label, f64>>> = BTreeMap::new();
            for (prefix_path, dist) in &dists {
                let config: Vec<Label> = cpd
                    .parents
                    .iter()
                    .map(|p| match p {
                        ParentRef::Invariant { invariant } => prefix_path[*invariant].clone(),
                        ParentRef::Lagged { var, lag } => {
                            let pos = inv + (t - *lag) * per_slice + var;
                            prefix_path[pos].clone()
                        }
                    })
                    .collect();
                groups.entry(config).or_default().push(dist);
            }
            let mut max_residual: f64 = 0.0;
            for members in groups.values() {
                for d in &members[1..] {
                    for (state, p) in members[0] {
                        let q = d.get(state).copied().unwrap_or(0.0);
                        max_residual = max_residual.max((p - q).abs());
                    }
                    for (state, q) in *d {
                        let p = members[0].get(state).copied().unwrap_or(0.0);
                        max_residual = max_residual.max((p - q).abs());
                    }
                }
            }
            statements.push(CiStatement {
                variable: dbn.slice_vars[j].name.clone(),
                slice: t,
                holds: max_residual <= tol,
                max_residual,
            });
        }
    }
    let ok = statements.iter().all(|s| s.holds);
    Ok(CiReport { statements, ok })
}
