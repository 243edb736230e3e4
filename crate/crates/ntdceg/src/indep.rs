//! Local, contemporaneous and stochastic independence, and Granger
//! noncausality, for stratified models.
//!
//! All three notions quantify over full event histories: local independence
//! asks that the slice-t law of X be constant across histories that agree
//! after erasing the Y coordinates; contemporaneous independence asks that X
//! and Y factorize within the slice given the full history; stochastic
//! independence combines both through the double projection. The paper's
//! "for all t" is replaced by a finite window plus a stabilization signal:
//! by time-homogeneity the slice law depends on history only through the
//! entry position, so once the co-reachable position pattern repeats between
//! consecutive slices the verdict has been exercised on every pattern the
//! cyclic part can produce. Without that signal the report refuses to claim
//! more than the checked window.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::cuts::developments;
use crate::graph::{Ntdceg, PositionId};
use crate::model::staging::ProcessVar;
use crate::model::tree::{EventTree, Label};
use crate::walks::{enumerate_walks, root_slice, Walk, WalkError};
use crate::SIZE_GUARD;

#[derive(Debug, Error)]
pub enum IndepError {
    #[error("model carries no variable bindings; independence queries need a stratified model")]
    NotStratified,
    #[error("variable bindings do not match the tree: {0}")]
    BadBindings(String),
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("variable sets must be disjoint")]
    NotDisjoint,
    #[error("horizon {horizon} must be at least the starting slice {from}")]
    BadWindow { from: i32, horizon: i32 },
    #[error("size guard: {count} histories exceed the limit of {max}")]
    SizeGuard { count: usize, max: usize },
    #[error(transparent)]
    Walk(#[from] WalkError),
}

/// Binding of within-slice tree levels to named process variables.
pub struct VariableView<'m> {
    pub model: &'m Ntdceg,
    pub invariant: Vec<ProcessVar>,
    pub slice: Vec<ProcessVar>,
}

impl<'m> VariableView<'m> {
    /// Validates the model's declared bindings against the tree: every level
    /// branches on exactly the variable's state space, and units terminate
    /// only at the final within-slice level (mid-slice absorption would
    /// leave the slice vector partially defined).
    pub fn new(model: &'m Ntdceg) -> Result<Self, IndepError> {
        let bindings = model.prefix.variables.as_ref().ok_or(IndepError::NotStratified)?;
        check_levels(&model.prefix.tog.t_slice, &bindings.slice, "slice tree")?;
        if let Some(inv) = &model.prefix.tog.t_minus1 {
            check_levels(inv, &bindings.invariant, "invariant tree")?;
        } else if !bindings.invariant.is_empty() {
            return Err(IndepError::BadBindings(
                "invariant variables declared but the invariant tree is empty".into(),
            ));
        }
        Ok(VariableView { model, invariant: bindings.invariant.clone(), slice: bindings.slice.clone() })
    }

    pub fn var_indices(&self, names: &[String]) -> Result<Vec<usize>, IndepError> {
        names
            .iter()
            .map(|n| {
                self.slice
                    .iter()
                    .position(|v| &v.name == n)
                    .ok_or_else(|| IndepError::UnknownVariable(n.clone()))
            })
            .collect()
    }
}

fn check_levels(tree: &EventTree, vars: &[ProcessVar], what: &str) -> Result<(), IndepError> {
    for n in tree.preorder() {
        let depth = tree.depth(n);
        if tree.is_leaf(n) {
            if depth != vars.len() {
                return Err(IndepError::BadBindings(format!(
                    "{what}: leaf at level {depth}, expected all leaves at level {}",
                    vars.len()
                )));
            }
            continue;
        }
        if depth >= vars.len() {
            return Err(IndepError::BadBindings(format!(
                "{what}: situation at level {depth} but only {} variables bound",
                vars.len()
            )));
        }
        let labels: BTreeSet<&Label> = tree.children(n).iter().map(|(l, _)| l).collect();
        let states: BTreeSet<&Label> = vars[depth].states.iter().collect();
        if labels != states {
            return Err(IndepError::BadBindings(format!(
                "{what}: level {depth} branches on {{{}}}, variable {} has states {{{}}}",
                labels.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(","),
                vars[depth].name,
                vars[depth].states.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(",")
            )));
        }
    }
    Ok(())
}

/// One positive-probability history through the end of slice `t - 1`.
struct History {
    walk: Walk,
    prob: f64,
    /// Coordinates: (slice, level) -> value; invariant coordinates at slice -1.
    coords: BTreeMap<(i32, usize), Label>,
    end: PositionId,
}

fn histories(view: &VariableView, t: i32) -> Result<Vec<History>, IndepError> {
    let model = view.model;
    let entries: BTreeSet<PositionId> = model
        .positions
        .iter()
        .filter(|p| p.within_depth == 0 && p.slice.occurs_at(t, model.order()))
        .map(|p| p.id)
        .collect();
    let walks = enumerate_walks(model, &entries, t)?;
    let mut out = Vec::with_capacity(walks.len());
    for walk in walks {
        if walk.prob <= 0.0 {
            continue;
        }
        let mut coords = BTreeMap::new();
        let mut slice = root_slice(model);
        let mut level = 0usize;
        let per_slice = |s: i32| if s < 0 { view.invariant.len() } else { view.slice.len() };
        for &e in &walk.edges {
            let edge = &model.edges[e];
            coords.insert((slice, level), edge.label.clone());
            level += 1;
            if level == per_slice(slice) {
                slice += 1;
                level = 0;
            }
        }
        debug_assert_eq!(slice, t);
        let prob = walk.prob;
        let end = walk.end;
        out.push(History { walk, prob, coords, end });
        if out.len() > SIZE_GUARD {
            return Err(IndepError::SizeGuard { count: out.len(), max: SIZE_GUARD });
        }
    }
    Ok(out)
}

/// Law of the full slice-t variable vector given arrival at `entry`.
fn slice_law(model: &Ntdceg, entry: PositionId) -> BTreeMap<Vec<Label>, f64> {
    developments(model, entry, 0)
}

fn marginal(law: &BTreeMap<Vec<Label>, f64>, keep: &[usize]) -> BTreeMap<Vec<Label>, f64> {
    let mut out: BTreeMap<Vec<Label>, f64> = BTreeMap::new();
    for (assign, p) in law {
        let key: Vec<Label> = keep.iter().map(|&i| assign[i].clone()).collect();
        *out.entry(key).or_insert(0.0) += p;
    }
    out
}

fn law_distance(a: &BTreeMap<Vec<Label>, f64>, b: &BTreeMap<Vec<Label>, f64>) -> f64 {
    let keys: BTreeSet<&Vec<Label>> = a.keys().chain(b.keys()).collect();
    keys.into_iter()
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

/// Projection of a history erasing the given slice-variable coordinates.
fn erase(coords: &BTreeMap<(i32, usize), Label>, erased: &[usize]) -> Vec<((i32, usize), Label)> {
    coords
        .iter()
        .filter(|((slice, level), _)| *slice < 0 || !erased.contains(level))
        .map(|(k, v)| (*k, v.clone()))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub t: i32,
    pub detail: String,
}

/// Verdict plus scope information for one independence query.
#[derive(Debug, Clone, Serialize)]
pub struct IndepReport {
    pub holds: bool,
    pub witness: Option<Witness>,
    pub from_slice: i32,
    pub horizon: i32,
    /// Whether the co-reachable position pattern repeated between the last
    /// two slices; without this the verdict covers only the checked window.
    pub stabilized: bool,
}

fn window(view: &VariableView, from: i32, horizon: i32) -> Result<(), IndepError> {
    if horizon < from || from < 0 {
        return Err(IndepError::BadWindow { from, horizon });
    }
    let _ = view;
    Ok(())
}

/// X is T-locally independent of Y when the slice law of X is measurable
/// with respect to the Y-erased history, for every slice in the window.
pub fn local_independence(
    view: &VariableView,
    x: &[String],
    y: &[String],
    from: i32,
    horizon: i32,
    tol: f64,
) -> Result<IndepReport, IndepError> {
    window(view, from, horizon)?;
    let xi = view.var_indices(x)?;
    let yi = view.var_indices(y)?;
    if xi.iter().any(|i| yi.contains(i)) {
        return Err(IndepError::NotDisjoint);
    }
    let model = view.model;
    let mut witness = None;
    let mut coverage: Vec<BTreeSet<(PositionId, PositionId)>> = Vec::new();
    for t in from..=horizon {
        let hists = histories(view, t)?;
        let mut groups: BTreeMap<Vec<((i32, usize), Label)>, Vec<&History>> = BTreeMap::new();
        for h in &hists {
            groups.entry(erase(&h.coords, &yi)).or_default().push(h);
        }
        let mut pairs = BTreeSet::new();
        for members in groups.values() {
            let first_law = marginal(&slice_law(model, members[0].end), &xi);
            for h in &members[1..] {
                pairs.insert(ordered_pair(members[0].end, h.end));
                let law = marginal(&slice_law(model, h.end), &xi);
                let d = law_distance(&first_law, &law);
                if d > tol && witness.is_none() {
                    witness = Some(Witness {
                        t,
                        detail: format!(
                            "histories [{}] and [{}] agree off {:?} but give slice-{t} laws differing by {d:.3e}",
                            display_walk(model, &members[0].walk),
                            display_walk(model, &h.walk),
                            y
                        ),
                    });
                }
            }
            for w in members.windows(2) {
                pairs.insert(ordered_pair(w[0].end, w[1].end));
            }
        }
        coverage.push(pairs);
    }
    Ok(report(from, horizon, view, witness, &coverage))
}

fn ordered_pair(a: PositionId, b: PositionId) -> (PositionId, PositionId) {
    (a.min(b), a.max(b))
}

fn display_walk(model: &Ntdceg, w: &Walk) -> String {
    w.labels(model).iter().map(|l| l.as_str()).collect::<Vec<_>>().join(".")
}

fn report(
    from: i32,
    horizon: i32,
    view: &VariableView,
    witness: Option<Witness>,
    coverage: &[BTreeSet<(PositionId, PositionId)>],
) -> IndepReport {
    let n = view.model.order() as i32;
    let stabilized = coverage.len() >= 2
        && horizon >= n.max(from + 1)
        && coverage[coverage.len() - 1] == coverage[coverage.len() - 2];
    IndepReport { holds: witness.is_none(), witness, from_slice: from, horizon, stabilized }
}

/// X and Y are T-contemporaneously independent when their within-slice joint
/// factorizes given every positive-probability history.
pub fn contemporaneous_independence(
    view: &VariableView,
    x: &[String],
    y: &[String],
    from: i32,
    horizon: i32,
    tol: f64,
) -> Result<IndepReport, IndepError> {
    window(view, from, horizon)?;
    let xi = view.var_indices(x)?;
    let yi = view.var_indices(y)?;
    if xi.iter().any(|i| yi.contains(i)) {
        return Err(IndepError::NotDisjoint);
    }
    let model = view.model;
    let both: Vec<usize> = xi.iter().chain(yi.iter()).copied().collect();
    let mut witness = None;
    let mut coverage: Vec<BTreeSet<(PositionId, PositionId)>> = Vec::new();
    for t in from..=horizon {
        let hists = histories(view, t)?;
        let mut seen = BTreeSet::new();
        for h in &hists {
            seen.insert(ordered_pair(h.end, h.end));
            let law = slice_law(model, h.end);
            let joint = marginal(&law, &both);
            let px = marginal(&law, &xi);
            let py = marginal(&law, &yi);
            let mut product: BTreeMap<Vec<Label>, f64> = BTreeMap::new();
            for (kx, vx) in &px {
                for (ky, vy) in &py {
                    let mut key = kx.clone();
                    key.extend(ky.iter().cloned());
                    product.insert(key, vx * vy);
                }
            }
            let d = law_distance(&joint, &product);
            if d > tol && witness.is_none() {
                witness = Some(Witness {
                    t,
                    detail: format!(
                        "history [{}]: joint law of ({:?},{:?}) at slice {t} deviates from the product by {d:.3e}",
                        display_walk(model, &h.walk),
                        x,
                        y
                    ),
                });
            }
        }
        coverage.push(seen);
    }
    Ok(report(from, horizon, view, witness, &coverage))
}

/// X and Y are T-stochastically independent when the within-slice joint
/// given any history equals the product of the double projections: the law
/// of X given the Y-erased history times the law of Y given the X-erased
/// history.
pub fn stochastic_independence(
    view: &VariableView,
    x: &[String],
    y: &[String],
    from: i32,
    horizon: i32,
    tol: f64,
) -> Result<IndepReport, IndepError> {
    window(view, from, horizon)?;
    let xi = view.var_indices(x)?;
    let yi = view.var_indices(y)?;
    if xi.iter().any(|i| yi.contains(i)) {
        return Err(IndepError::NotDisjoint);
    }
    let model = view.model;
    let both: Vec<usize> = xi.iter().chain(yi.iter()).copied().collect();
    let mut witness = None;
    let mut coverage: Vec<BTreeSet<(PositionId, PositionId)>> = Vec::new();
    for t in from..=horizon {
        let hists = histories(view, t)?;
        // Mixture laws per projection class.
        let x_given_class = class_laws(model, &hists, &yi, &xi);
        let y_given_class = class_laws(model, &hists, &xi, &yi);
        let mut pairs = BTreeSet::new();
        for h in &hists {
            let law = slice_law(model, h.end);
            let joint = marginal(&law, &both);
            let px = &x_given_class[&erase(&h.coords, &yi)];
            let py = &y_given_class[&erase(&h.coords, &xi)];
            let mut product: BTreeMap<Vec<Label>, f64> = BTreeMap::new();
            for (kx, vx) in px {
                for (ky, vy) in py {
                    let mut key = kx.clone();
                    key.extend(ky.iter().cloned());
                    product.insert(key, vx * vy);
                }
            }
            let d = law_distance(&joint, &product);
            if d > tol && witness.is_none() {
                witness = Some(Witness {
                    t,
                    detail: format!(
                        "history [{}]: slice-{t} joint deviates from the double projection by {d:.3e}",
                        display_walk(model, &h.walk)
                    ),
                });
            }
            pairs.insert(ordered_pair(h.end, h.end));
        }
        coverage.push(pairs);
    }
    Ok(report(from, horizon, view, witness, &coverage))
}

/// For each erased-projection class, the probability-weighted mixture of the
/// members' marginal laws.
fn class_laws(
    model: &Ntdceg,
    hists: &[History],
    erased: &[usize],
    keep: &[usize],
) -> BTreeMap<Vec<((i32, usize), Label)>, BTreeMap<Vec<Label>, f64>> {
    let mut mass: BTreeMap<Vec<((i32, usize), Label)>, f64> = BTreeMap::new();
    let mut acc: BTreeMap<Vec<((i32, usize), Label)>, BTreeMap<Vec<Label>, f64>> = BTreeMap::new();
    for h in hists {
        let key = erase(&h.coords, erased);
        *mass.entry(key.clone()).or_insert(0.0) += h.prob;
        let law = marginal(&slice_law(model, h.end), keep);
        let entry = acc.entry(key).or_default();
        for (k, v) in law {
            *entry.entry(k).or_insert(0.0) += h.prob * v;
        }
    }
    for (key, law) in &mut acc {
        let m = mass[key];
        for v in law.values_mut() {
            *v /= m;
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GrangerVerdict {
    /// The effect set is locally independent of the cause set.
    Noncausal,
    PrimaFacie,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrangerReport {
    pub verdict: GrangerVerdict,
    pub witness: Option<Witness>,
    pub stabilized: bool,
    /// Standing assumption of the Granger reading.
    pub assumption: &'static str,
}

/// Y (`cause`) is Granger noncausal for X (`effect`) exactly when X is
/// locally independent of Y.
pub fn granger_query(
    view: &VariableView,
    cause: &[String],
    effect: &[String],
    from: i32,
    horizon: i32,
    tol: f64,
) -> Result<GrangerReport, IndepError> {
    let report = local_independence(view, effect, cause, from, horizon, tol)?;
    Ok(GrangerReport {
        verdict: if report.holds { GrangerVerdict::Noncausal } else { GrangerVerdict::PrimaFacie },
        witness: report.witness,
        stabilized: report.stabilized,
        assumption: "the event tree completely describes the natural behaviour of the process",
    })
}
