//! Cuts, fine cuts, and their intrinsic random variables.
//!
//! A cut is a set of stages, a fine cut a set of positions, both at a time
//! slice `t`, such that every verification path crosses the set exactly
//! once. Crossing the set induces three random variables: X, the immediate
//! event (cuts) or the event sequence over the next `s` slices (fine cuts);
//! Q, which stage / block was crossed; and Z, the arrival walk. Their mass
//! functions are sums of walk monomials, normalized over the enumerated
//! support. The conditional-independence statements X ⊥ Z | Q are checked
//! exactly on the enumerated joint.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::graph::{EdgeKind, EdgeTarget, Ntdceg, PositionId};
use crate::model::staging::StageId;
use crate::model::tree::Label;
use crate::walks::{cut_paths, enumerate_walks, CutPath, Walk, WalkError};

#[derive(Debug, Error)]
pub enum CutError {
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error("unknown stage {0}")]
    UnknownStage(StageId),
    #[error("unknown position {0}")]
    UnknownPosition(PositionId),
    #[error("{0} is not a cut at t={1}: a path crosses it {2} times")]
    NotACut(String, i32, usize),
    #[error("cut is unreachable at t={0}: no arrival walks")]
    Unreachable(i32),
    #[error("stage {stage}: member positions at t disagree on the labelled distribution")]
    MisalignedStage { stage: StageId },
    #[error("cut time must be at least 0 (fine cuts: at least the root slice)")]
    BadTime,
}

/// Outcome of the exactly-one-crossing check.
#[derive(Debug, Clone)]
pub struct CutCheck {
    pub holds: bool,
    /// A violating path and its crossing count, when the property fails.
    pub witness: Option<(CutPath, usize)>,
}

fn stage_members_at(model: &Ntdceg, stages: &BTreeSet<StageId>, t: i32) -> Result<BTreeSet<PositionId>, CutError> {
    for s in stages {
        if !model.prefix.stages.contains_key(s) {
            return Err(CutError::UnknownStage(s.clone()));
        }
    }
    let n = model.order();
    Ok(model
        .positions
        .iter()
        .filter(|p| stages.contains(&p.stage) && p.slice.occurs_at(t, n))
        .map(|p| p.id)
        .collect())
}

fn positions_at(model: &Ntdceg, positions: &BTreeSet<PositionId>, t: i32) -> Result<BTreeSet<PositionId>, CutError> {
    let n = model.order();
    for p in positions {
        if *p >= model.positions.len() {
            return Err(CutError::UnknownPosition(*p));
        }
    }
    Ok(positions
        .iter()
        .copied()
        .filter(|p| model.positions[*p].slice.occurs_at(t, n))
        .collect())
}

fn check_crossings(model: &Ntdceg, members: &BTreeSet<PositionId>, t: i32) -> Result<CutCheck, CutError> {
    let n = model.order() as i32;
    let t_eff = t.min(n - 1);
    let paths = cut_paths(model, t)?;
    for path in paths {
        let crossings = path
            .positions
            .iter()
            .filter(|(p, time)| *time == t_eff && members.contains(p))
            .count();
        if crossings != 1 {
            return Ok(CutCheck { holds: false, witness: Some((path, crossings)) });
        }
    }
    Ok(CutCheck { holds: true, witness: None })
}

/// Checks that every verification path at slice `t` crosses exactly one
/// position belonging to exactly one of the given stages.
pub fn verify_cut(model: &Ntdceg, stages: &BTreeSet<StageId>, t: i32) -> Result<CutCheck, CutError> {
    if t < 0 {
        return Err(CutError::BadTime);
    }
    let members = stage_members_at(model, stages, t)?;
    check_crossings(model, &members, t)
}

/// Checks the exactly-one-crossing property for a set of positions.
pub fn verify_fine_cut(model: &Ntdceg, positions: &BTreeSet<PositionId>, t: i32) -> Result<CutCheck, CutError> {
    let members = positions_at(model, positions, t)?;
    check_crossings(model, &members, t)
}

/// A state of the separator variable Q.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum QState {
    Stage(StageId),
    Block(Vec<PositionId>),
}

/// The intrinsic variables of a cut or fine cut, with exact mass functions.
#[derive(Debug, Clone)]
pub struct CutVarTriple {
    pub t: i32,
    /// Fine-cut horizon; `None` for plain cuts.
    pub s: Option<usize>,
    /// X states: events (length-1 sequences for cuts) or `s`-slice event
    /// sequences, in lexicographic order.
    pub x_states: Vec<Vec<Label>>,
    pub x_pmf: Vec<f64>,
    pub q_states: Vec<QState>,
    pub q_pmf: Vec<f64>,
    pub z_walks: Vec<Walk>,
    pub z_pmf: Vec<f64>,
    /// Index into `q_states` per arrival walk.
    pub q_of_z: Vec<usize>,
    /// Recovery table π(X = x | Q = q): rows follow `q_states`, columns
    /// `x_states`; zero whenever x cannot unfold from q.
    pub x_given_q: Vec<Vec<f64>>,
    /// Conditional law of X given the walk's endpoint, per walk.
    x_given_z: Vec<Vec<f64>>,
}

impl CutVarTriple {
    /// Joint mass p(Z = z, X = x).
    pub fn joint(&self, z: usize, x: usize) -> f64 {
        self.z_pmf[z] * self.x_given_z[z][x]
    }
}

/// Materializes X, Q, Z for a verified cut.
pub fn cut_variables(
    model: &Ntdceg,
    stages: &BTreeSet<StageId>,
    t: i32,
    tol: f64,
) -> Result<CutVarTriple, CutError> {
    let check = verify_cut(model, stages, t)?;
    if !check.holds {
        let (path, k) = check.witness.unwrap();
        return Err(CutError::NotACut(path.display(model), t, k));
    }
    let members = stage_members_at(model, stages, t)?;
    let walks = enumerate_walks(model, &members, t)?;
    if walks.is_empty() {
        return Err(CutError::Unreachable(t));
    }

    // Per-stage labelled law, from its member positions at t; members must
    // agree for the event bijection to be well defined.
    let mut stage_law: BTreeMap<&StageId, BTreeMap<&Label, f64>> = BTreeMap::new();
    for &p in &members {
        let pos = &model.positions[p];
        let law: BTreeMap<&Label, f64> = model.out_edges(p).map(|e| (&e.label, e.prob)).collect();
        match stage_law.get(&pos.stage) {
            None => {
                stage_law.insert(&pos.stage, law);
            }
            Some(prev) => {
                let same = prev.len() == law.len()
                    && prev.iter().all(|(l, pr)| law.get(l).is_some_and(|q| (q - pr).abs() <= tol));
                if !same {
                    return Err(CutError::MisalignedStage { stage: pos.stage.clone() });
                }
            }
        }
    }

    let q_ids: Vec<&StageId> = stage_law.keys().copied().collect();
    let x_labels: BTreeSet<&Label> = stage_law.values().flat_map(|law| law.keys().copied()).collect();
    let x_states: Vec<Vec<Label>> = x_labels.iter().map(|l| vec![(*l).clone()]).collect();

    let q_index: BTreeMap<&StageId, usize> = q_ids.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let x_index: BTreeMap<&Label, usize> = x_labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();

    let x_given_q: Vec<Vec<f64>> = q_ids
        .iter()
        .map(|q| {
            let law = &stage_law[*q];
            x_labels
                .iter()
                .map(|l| law.get(*l).copied().unwrap_or(0.0))
                .collect()
        })
        .collect();

    let mut q_of_z = Vec::with_capacity(walks.len());
    let mut x_given_z = Vec::with_capacity(walks.len());
    for w in &walks {
        let pos = &model.positions[w.end];
        q_of_z.push(q_index[&pos.stage]);
        let mut row = vec![0.0; x_states.len()];
        for e in model.out_edges(w.end) {
            row[x_index[&e.label]] = e.prob;
        }
        x_given_z.push(row);
    }

    Ok(assemble(t, None, x_states, q_ids.into_iter().map(|s| QState::Stage(s.clone())).collect(), walks, q_of_z, x_given_z, x_given_q))
}

/// Partition of a fine cut induced by truncating every future `s` slices
/// after the cut slice: identity when `s >= N-1` (the positions of the
/// infinite model already separate), vertex-contraction classes otherwise.
pub fn beth_partition(
    model: &Ntdceg,
    positions: &BTreeSet<PositionId>,
    s: usize,
) -> Vec<Vec<PositionId>> {
    let sorted: Vec<PositionId> = positions.iter().copied().collect();
    if s >= model.order().saturating_sub(1) {
        return sorted.into_iter().map(|p| vec![p]).collect();
    }
    let mut memo: BTreeMap<(PositionId, PositionId, usize), bool> = BTreeMap::new();
    let mut blocks: Vec<Vec<PositionId>> = Vec::new();
    for &p in &sorted {
        match blocks.iter_mut().find(|b| bounded_equiv(model, b[0], p, s, &mut memo)) {
            Some(b) => b.push(p),
            None => blocks.push(vec![p]),
        }
    }
    blocks
}

/// Coloured bisimulation with a slice budget: boundary-edge targets become
/// the sink once the budget is exhausted, matching the vertex contraction of
/// the CEG truncated `s` slices past the cut.
fn bounded_equiv(
    model: &Ntdceg,
    a: PositionId,
    b: PositionId,
    slices_left: usize,
    memo: &mut BTreeMap<(PositionId, PositionId, usize), bool>,
) -> bool {
    if a == b {
        return true;
    }
    let key = (a.min(b), a.max(b), slices_left);
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let result = (|| {
        if model.positions[a].stage != model.positions[b].stage {
            return false;
        }
        let ea: Vec<_> = model.out_edges(a).collect();
        let eb: Vec<_> = model.out_edges(b).collect();
        if ea.len() != eb.len() {
            return false;
        }
        for (x, y) in ea.iter().zip(eb.iter()) {
            if x.label != y.label {
                return false;
            }
            let ta = truncated_target(x, slices_left);
            let tb = truncated_target(y, slices_left);
            match (ta, tb) {
                (None, None) => {}
                (Some((p, sl)), Some((q, _))) => {
                    if !bounded_equiv(model, p, q, sl, memo) {
                        return false;
                    }
                }
                _ => return false,
            }
        }
        true
    })();
    memo.insert(key, result);
    result
}

/// `None` is the sink (terminal, or truncated boundary target).
fn truncated_target(e: &crate::graph::GraphEdge, slices_left: usize) -> Option<(PositionId, usize)> {
    match (&e.to, e.kind) {
        (EdgeTarget::Position(p), EdgeKind::Within) => Some((*p, slices_left)),
        (EdgeTarget::Position(p), _) => {
            if slices_left == 0 {
                None
            } else {
                Some((*p, slices_left - 1))
            }
        }
        _ => None,
    }
}

/// Event sequences that can unfold from a position over the rest of the
/// current slice plus `s` further slices, with their probabilities. The
/// boundary event out of the final slice is part of the development; its
/// target is not.
pub fn developments(model: &Ntdceg, from: PositionId, s: usize) -> BTreeMap<Vec<Label>, f64> {
    let mut out = BTreeMap::new();
    let mut seq: Vec<Label> = Vec::new();
    fn dfs(
        model: &Ntdceg,
        at: PositionId,
        budget: usize,
        prob: f64,
        seq: &mut Vec<Label>,
        out: &mut BTreeMap<Vec<Label>, f64>,
    ) {
        for e in model.out_edges(at) {
            seq.push(e.label.clone());
            match truncated_target(e, budget) {
                None => {
                    *out.entry(seq.clone()).or_insert(0.0) += prob * e.prob;
                }
                Some((next, b)) => dfs(model, next, b, prob * e.prob, seq, out),
            }
            seq.pop();
        }
    }
    dfs(model, from, s, 1.0, &mut seq, &mut out);
    out
}

/// Materializes X, Q, Z for a verified fine cut at horizon `s`.
pub fn fine_cut_variables(
    model: &Ntdceg,
    positions: &BTreeSet<PositionId>,
    t: i32,
    s: usize,
    tol: f64,
) -> Result<CutVarTriple, CutError> {
    let check = verify_fine_cut(model, positions, t)?;
    if !check.holds {
        let (path, k) = check.witness.unwrap();
        return Err(CutError::NotACut(path.display(model), t, k));
    }
    let members = positions_at(model, positions, t)?;
    let walks = enumerate_walks(model, &members, t)?;
    if walks.is_empty() {
        return Err(CutError::Unreachable(t));
    }

    let blocks = beth_partition(model, &members, s);
    let mut block_of: BTreeMap<PositionId, usize> = BTreeMap::new();
    let mut q_states: Vec<QState> = Vec::new();
    let mut ordered: Vec<Vec<PositionId>> = blocks;
    for b in &mut ordered {
        b.sort_unstable();
    }
    ordered.sort();
    for (i, b) in ordered.iter().enumerate() {
        for p in b {
            block_of.insert(*p, i);
        }
        q_states.push(QState::Block(b.clone()));
    }

    let dev: BTreeMap<PositionId, BTreeMap<Vec<Label>, f64>> =
        members.iter().map(|&p| (p, developments(model, p, s))).collect();
    let x_set: BTreeSet<Vec<Label>> = dev.values().flat_map(|m| m.keys().cloned()).collect();
    let x_states: Vec<Vec<Label>> = x_set.into_iter().collect();
    let x_index: BTreeMap<&Vec<Label>, usize> = x_states.iter().enumerate().map(|(i, x)| (x, i)).collect();

    // Blocks were built so that members share the truncated law; assert it.
    let mut x_given_q: Vec<Vec<f64>> = vec![vec![0.0; x_states.len()]; q_states.len()];
    for (q, state) in q_states.iter().enumerate() {
        let QState::Block(b) = state else { unreachable!() };
        let rep = &dev[&b[0]];
        for (x, p) in rep {
            x_given_q[q][x_index[x]] = *p;
        }
        for other in &b[1..] {
            for (x, p) in &dev[other] {
                debug_assert!((x_given_q[q][x_index[x]] - p).abs() <= tol.max(1e-12));
            }
        }
    }

    let mut q_of_z = Vec::with_capacity(walks.len());
    let mut x_given_z = Vec::with_capacity(walks.len());
    for w in &walks {
        q_of_z.push(block_of[&w.end]);
        let mut row = vec![0.0; x_states.len()];
        for (x, p) in &dev[&w.end] {
            row[x_index[x]] = *p;
        }
        x_given_z.push(row);
    }

    Ok(assemble(t, Some(s), x_states, q_states, walks, q_of_z, x_given_z, x_given_q))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    t: i32,
    s: Option<usize>,
    x_states: Vec<Vec<Label>>,
    q_states: Vec<QState>,
    walks: Vec<Walk>,
    q_of_z: Vec<usize>,
    x_given_z: Vec<Vec<f64>>,
    x_given_q: Vec<Vec<f64>>,
) -> CutVarTriple {
    let total: f64 = walks.iter().map(|w| w.prob).sum();
    let z_pmf: Vec<f64> = walks.iter().map(|w| w.prob / total).collect();
    let mut q_pmf = vec![0.0; q_states.len()];
    for (z, q) in q_of_z.iter().enumerate() {
        q_pmf[*q] += z_pmf[z];
    }
    let mut x_pmf = vec![0.0; x_states.len()];
    for (z, row) in x_given_z.iter().enumerate() {
        for (x, p) in row.iter().enumerate() {
            x_pmf[x] += z_pmf[z] * p;
        }
    }
    CutVarTriple {
        t,
        s,
        x_states,
        x_pmf,
        q_states,
        q_pmf,
        z_walks: walks,
        z_pmf,
        q_of_z,
        x_given_q,
        x_given_z,
    }
}

/// Result of the conditional-independence theorem check.
#[derive(Debug, Clone)]
pub struct TheoremReport {
    /// max |p(x|z) - p(x|q)| over the support.
    pub residual: f64,
    pub holds: bool,
    pub converse: Option<ConverseReport>,
}

/// Converse direction for a caller-supplied function f of Z.
#[derive(Debug, Clone)]
pub struct ConverseReport {
    /// max |p(x|z) - p(x|f(z))| over the support.
    pub residual: f64,
    /// Whether X ⊥ Z | f(Z) holds at the tolerance.
    pub x_indep_given_f: bool,
    /// When it holds: is Q a function of f(Z) on the support?
    pub q_measurable: Option<bool>,
}

/// Verifies X ⊥ Z | Q on the exact enumerated joint, plus optionally the
/// converse statement for a function of Z.
pub fn check_theorem(triple: &CutVarTriple, f: Option<&[usize]>, tol: f64) -> TheoremReport {
    let residual = factorization_residual(triple, &triple.q_of_z);
    let converse = f.map(|classes| {
        assert_eq!(classes.len(), triple.z_walks.len(), "f must map every walk");
        let f_residual = factorization_residual(triple, classes);
        let x_indep_given_f = f_residual <= tol;
        let q_measurable = x_indep_given_f.then(|| {
            let mut q_by_class: BTreeMap<usize, usize> = BTreeMap::new();
            for (z, c) in classes.iter().enumerate() {
                if triple.z_pmf[z] <= 0.0 {
                    continue;
                }
                match q_by_class.get(c) {
                    None => {
                        q_by_class.insert(*c, triple.q_of_z[z]);
                    }
                    Some(&q) if q != triple.q_of_z[z] => return false,
                    Some(_) => {}
                }
            }
            true
        });
        ConverseReport { residual: f_residual, x_indep_given_f, q_measurable }
    });
    TheoremReport { residual, holds: residual <= tol, converse }
}

/// max over classes c, walks z in c and states x of |p(x|z) - p(x|c)|,
/// weighted classes computed from the joint.
fn factorization_residual(triple: &CutVarTriple, class_of_z: &[usize]) -> f64 {
    let mut class_mass: BTreeMap<usize, f64> = BTreeMap::new();
    let mut class_x: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for z in 0..triple.z_walks.len() {
        let c = class_of_z[z];
        *class_mass.entry(c).or_insert(0.0) += triple.z_pmf[z];
        let entry = class_x.entry(c).or_insert_with(|| vec![0.0; triple.x_states.len()]);
        for (x, p) in triple.x_given_z[z].iter().enumerate() {
            entry[x] += triple.z_pmf[z] * p;
        }
    }
    let mut residual: f64 = 0.0;
    for z in 0..triple.z_walks.len() {
        if triple.z_pmf[z] <= 0.0 {
            continue;
        }
        let c = class_of_z[z];
        let mass = class_mass[&c];
        if mass <= 0.0 {
            continue;
        }
        for (x, p) in triple.x_given_z[z].iter().enumerate() {
            let cond = class_x[&c][x] / mass;
            residual = residual.max((p - cond).abs());
        }
    }
    residual
}

/// Cut + theorem in one call (the CLI surface).
pub fn check_theorem_cut(
    model: &Ntdceg,
    stages: &BTreeSet<StageId>,
    t: i32,
    f: Option<&[usize]>,
    tol: f64,
) -> Result<(CutVarTriple, TheoremReport), CutError> {
    let triple = cut_variables(model, stages, t, tol)?;
    let report = check_theorem(&triple, f, tol);
    Ok((triple, report))
}

pub fn check_theorem_finecut(
    model: &Ntdceg,
    positions: &BTreeSet<PositionId>,
    t: i32,
    s: usize,
    f: Option<&[usize]>,
    tol: f64,
) -> Result<(CutVarTriple, TheoremReport), CutError> {
    let triple = fine_cut_variables(model, positions, t, s, tol)?;
    let report = check_theorem(&triple, f, tol);
    Ok((triple, report))
}

impl CutVarTriple {
    /// Deterministic textual report: state tables, bijections and pmfs.
    pub fn render(&self, model: &Ntdceg) -> String {
        let mut out = String::new();
        match self.s {
            Some(s) => out.push_str(&format!("fine cut at t={} horizon s={}\n", self.t, s)),
            None => out.push_str(&format!("cut at t={}\n", self.t)),
        }
        out.push_str(&format!("Q: {} states\n", self.q_states.len()));
        for (i, q) in self.q_states.iter().enumerate() {
            let name = match q {
                QState::Stage(s) => s.clone(),
                QState::Block(b) => {
                    let names: Vec<String> =
                        b.iter().map(|p| model.positions[*p].name.clone()).collect();
                    format!("{{{}}}", names.join(", "))
                }
            };
            out.push_str(&format!("  q{} -> {}  pi_Q={}\n", i + 1, name, self.q_pmf[i]));
        }
        out.push_str(&format!("X: {} states\n", self.x_states.len()));
        for (i, x) in self.x_states.iter().enumerate() {
            out.push_str(&format!("  x{} -> ({})  pi_X={}\n", i + 1, x.join(","), self.x_pmf[i]));
        }
        out.push_str(&format!("Z: {} walks\n", self.z_walks.len()));
        for (i, w) in self.z_walks.iter().enumerate() {
            out.push_str(&format!("  z{} -> {}  pi_Z={}\n", i + 1, w.display(model), self.z_pmf[i]));
        }
        out.push_str("pi(X|Q):\n");
        for (qi, row) in self.x_given_q.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|p| p.to_string()).collect();
            out.push_str(&format!("  q{}: [{}]\n", qi + 1, cells.join(", ")));
        }
        out
    }
}
