//! Seeded random model generators for the property suites.
//!
//! Everything is a deterministic function of the seed, so failures
//! reproduce. The stratified generator draws a small variable product
//! space, picks for every tree level a random set of relevant conditioning
//! coordinates and stages situations by the values of those coordinates;
//! that yields models across the whole local / contemporaneous spectrum.
//! The free-form generator draws arbitrary small slice trees with random
//! template-consistent stagings, exercising the asymmetric shapes that the
//! product-space models cannot.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::dbn::{build_variable_tree, Cpd, DbnSpec, DbnVar, ParentRef, SliceModel};
use crate::model::staging::{slice_segments, ProcessVar, Stage, StagedTreePrefix, VarBindings};
use crate::model::tog::{unroll_tog, TogSpec};
use crate::model::tree::{EventTree, LeafKind};

fn random_row(rng: &mut ChaCha12Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn binary_vars(rng: &mut ChaCha12Rng, n: usize, allow_terminal: bool) -> Vec<DbnVar> {
    (0..n)
        .map(|j| {
            let states = vec![format!("v{j}0"), format!("v{j}1")];
            let terminal = if allow_terminal && j + 1 == n && rng.gen_bool(0.3) {
                BTreeSet::from([states[1].clone()])
            } else {
                BTreeSet::new()
            };
            DbnVar { name: format!("V{j}"), states, terminal }
        })
        .collect()
}

/// Random stratified 2T model with 2-3 binary per-slice variables.
pub fn random_stratified(seed: u64) -> StagedTreePrefix {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let nvars = 2 + rng.gen_range(0..2usize);
    let vars = binary_vars(&mut rng, nvars, true);
    let t_slice = build_variable_tree(&vars, true).unwrap();
    let tog = TogSpec::new(None, t_slice);
    let horizon = 2usize;

    // Relevant conditioning coordinates per level: slice 0 draws from the
    // earlier same-slice variables; the homogeneous part also from the
    // previous slice.
    let init_rel: Vec<Vec<usize>> = (0..nvars)
        .map(|j| (0..j).filter(|_| rng.gen_bool(0.5)).collect())
        .collect();
    let homog_rel: Vec<Vec<(bool, usize)>> = (0..nvars)
        .map(|j| {
            let mut rel: Vec<(bool, usize)> = (0..nvars)
                .filter(|_| rng.gen_bool(0.45))
                .map(|v| (true, v))
                .collect();
            rel.extend((0..j).filter(|_| rng.gen_bool(0.45)).map(|v| (false, v)));
            rel
        })
        .collect();

    let unrolled = unroll_tog(&tog, horizon + 1).unwrap();
    let mut stages: BTreeMap<String, Stage> = BTreeMap::new();
    let mut assignment = BTreeMap::new();
    let mut sits: Vec<usize> = unrolled.situations().collect();
    sits.sort_by(|a, b| unrolled.nodes[*a].id.cmp(&unrolled.nodes[*b].id));
    for un in sits {
        let node = &unrolled.nodes[un];
        let segs = slice_segments(&unrolled, un);
        let within = segs.get(&node.slice).cloned().unwrap_or_default();
        let level = within.len();
        let id = if node.slice == 0 {
            let vals: Vec<String> = init_rel[level].iter().map(|&v| within[v].clone()).collect();
            format!("L{level}@t0|{}", vals.join(","))
        } else {
            let prev = &segs[&(node.slice - 1)];
            let vals: Vec<String> = homog_rel[level]
                .iter()
                .map(|&(is_prev, v)| if is_prev { prev[v].clone() } else { within[v].clone() })
                .collect();
            format!("L{level}@h|{}", vals.join(","))
        };
        if !stages.contains_key(&id) {
            let probs = random_row(&mut rng, vars[level].states.len());
            stages.insert(
                id.clone(),
                Stage { label_order: vars[level].states.clone(), probs, bijections: BTreeMap::new() },
            );
        }
        assignment.insert(node.id.clone(), id);
    }

    let bindings = VarBindings {
        invariant: Vec::new(),
        slice: vars
            .iter()
            .map(|v| ProcessVar { name: v.name.clone(), states: v.states.clone() })
            .collect(),
    };
    StagedTreePrefix {
        name: format!("random-stratified-{seed}"),
        tog,
        horizon,
        stages,
        assignment,
        variables: Some(bindings),
    }
}

/// Random 2T-DBN with up to three binary slice variables over random
/// intra-slice and lag-1 parent sets.
pub fn random_dbn(seed: u64) -> DbnSpec {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let nvars = 2 + rng.gen_range(0..2usize);
    let slice_vars = binary_vars(&mut rng, nvars, true);
    let invariant_vars: Vec<DbnVar> = if rng.gen_bool(0.3) {
        vec![DbnVar {
            name: "U".into(),
            states: vec!["u0".into(), "u1".into()],
            terminal: BTreeSet::new(),
        }]
    } else {
        Vec::new()
    };
    let invariant_cpds: Vec<Cpd> = invariant_vars
        .iter()
        .map(|_| Cpd::root(random_row(&mut rng, 2)))
        .collect();

    let make_slice = |initial: bool, rng: &mut ChaCha12Rng| -> SliceModel {
        let cpds = (0..nvars)
            .map(|j| {
                let mut parents: Vec<ParentRef> = Vec::new();
                for i in 0..invariant_vars.len() {
                    if rng.gen_bool(0.4) {
                        parents.push(ParentRef::Invariant { invariant: i });
                    }
                }
                for v in 0..j {
                    if rng.gen_bool(0.4) {
                        parents.push(ParentRef::Lagged { var: v, lag: 0 });
                    }
                }
                if !initial {
                    for v in 0..nvars {
                        if rng.gen_bool(0.4) {
                            parents.push(ParentRef::Lagged { var: v, lag: 1 });
                        }
                    }
                }
                // Rows over the full parent product space (rows conditioned
                // on terminal ancestors are unreachable but harmless).
                let mut configs: Vec<Vec<String>> = vec![Vec::new()];
                for p in &parents {
                    let states = match p {
                        ParentRef::Invariant { invariant } => &invariant_vars[*invariant].states,
                        ParentRef::Lagged { var, .. } => &slice_vars[*var].states,
                    };
                    let mut next = Vec::new();
                    for c in &configs {
                        for s in states {
                            let mut c2 = c.clone();
                            c2.push(s.clone());
                            next.push(c2);
                        }
                    }
                    configs = next;
                }
                let table: BTreeMap<Vec<String>, Vec<f64>> = configs
                    .into_iter()
                    .map(|c| (c, random_row(rng, slice_vars[j].states.len())))
                    .collect();
                Cpd { parents, table }
            })
            .collect();
        SliceModel { cpds }
    };

    let initial = vec![make_slice(true, &mut rng)];
    let homogeneous = make_slice(false, &mut rng);
    DbnSpec {
        name: format!("random-dbn-{seed}"),
        order: 2,
        invariant_vars,
        invariant_cpds,
        slice_vars,
        initial,
        homogeneous,
    }
}

/// Random free-form staged model: an arbitrary small slice tree (arbitrary
/// branching, mid-path terminations) with a random template-consistent
/// staging. Exercises shapes outside the stratified family.
pub fn random_staged(seed: u64) -> StagedTreePrefix {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut t_slice = EventTree::new();
    grow(&mut rng, &mut t_slice, EventTree::ROOT, 0);
    // At least one recurrent leaf.
    if t_slice.recurrent_leaves().is_empty() {
        let leaf = t_slice.leaves()[0];
        t_slice.set_leaf_kind(leaf, LeafKind::Recurrent);
    }
    let t_minus1 = if rng.gen_bool(0.3) {
        let mut t = EventTree::new();
        t.add_child(EventTree::ROOT, "p");
        t.add_child(EventTree::ROOT, "q");
        Some(t)
    } else {
        None
    };
    let horizon = if rng.gen_bool(0.2) { 1 } else { 2 };
    let tog = TogSpec::new(t_minus1, t_slice);

    // Random coarsening of the context space, one group id per previous
    // exit path (and unit type); stages then key on (group, within node).
    let unrolled = unroll_tog(&tog, horizon + 1).unwrap();
    let group_count = 1 + rng.gen_range(0..3usize);
    let mut ctx_group: BTreeMap<String, usize> = BTreeMap::new();
    let mut stages: BTreeMap<String, Stage> = BTreeMap::new();
    let mut assignment = BTreeMap::new();

    // Deterministic iteration: situations in id order.
    let mut sits: Vec<usize> = unrolled.situations().collect();
    sits.sort_by(|a, b| unrolled.nodes[*a].id.cmp(&unrolled.nodes[*b].id));
    for un in sits {
        let node = &unrolled.nodes[un];
        let segs = slice_segments(&unrolled, un);
        let within = segs.get(&node.slice).cloned().unwrap_or_default();
        let unit = segs.get(&-1).cloned().unwrap_or_default();
        let id = if node.slice < horizon as i32 - 1 {
            // Initial slices: group by (slice, unit, within) with a random
            // chance of merging across units.
            let unit_key = if rng.gen_bool(0.5) { unit.join(".") } else { "*".into() };
            format!("i{}|{}|{}", node.slice, unit_key, within.join("."))
        } else {
            let mut key = unit.join(".");
            key.push('#');
            if horizon >= 2 {
                key.push_str(&segs[&(node.slice - 1)].join("."));
            }
            let g = *ctx_group.entry(key).or_insert_with(|| rng.gen_range(0..group_count));
            format!("h{}|{}", g, within.join("."))
        };
        if !stages.contains_key(&id) {
            let labels: Vec<String> = node.children.iter().map(|(l, _)| l.clone()).collect();
            let probs = random_row(&mut rng, labels.len());
            stages.insert(id.clone(), Stage { label_order: labels, probs, bijections: BTreeMap::new() });
        }
        assignment.insert(node.id.clone(), id);
    }
    StagedTreePrefix {
        name: format!("random-staged-{seed}"),
        tog,
        horizon,
        stages,
        assignment,
        variables: None,
    }
}

fn grow(rng: &mut ChaCha12Rng, tree: &mut EventTree, at: usize, depth: usize) {
    let arity = 2 + rng.gen_range(0..2usize);
    for k in 0..arity {
        let child = tree.add_child(at, format!("e{depth}{k}"));
        let go_deeper = depth < 1 || (depth < 2 && rng.gen_bool(0.6));
        if go_deeper && rng.gen_bool(0.8) {
            grow(rng, tree, child, depth + 1);
        } else if rng.gen_bool(0.3) {
            tree.set_leaf_kind(child, LeafKind::Terminal);
        } else {
            tree.set_leaf_kind(child, LeafKind::Recurrent);
        }
    }
}
