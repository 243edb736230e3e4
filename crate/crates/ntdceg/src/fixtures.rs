//! Built-in models used by the test suites, the acceptance gate and the
//! bundled example files.
//!
//! The prison radicalisation process: three per-slice variables, Network
//! (sporadic / frequent / intense social contact), Radicalisation (resilient
//! / vulnerable / adopting) and Transfer (remains / transferred, the latter
//! terminal), under a 1-Markov, time-homogeneous hypothesis with
//! context-specific structure. `radicalisation()` is the prior-conviction
//! panel; `panel2()` is the simpler no-prior-conviction panel; the merge
//! plan combines them under a conviction-by-nationality invariant tree.

use std::collections::BTreeMap;

use crate::composite::{Agreement, MergePlan, Panel};
use crate::model::staging::{slice_segments, ProcessVar, Stage, StagedTreePrefix, StageId, VarBindings};
use crate::model::tog::{unroll_tog, TogSpec, Unrolled};
use crate::model::tree::{EventTree, LeafKind};

/// The Network -> Radicalisation -> Transfer slice tree; Transfer = t ends
/// the unit's development.
pub fn radicalisation_slice_tree() -> EventTree {
    let mut t = EventTree::new();
    for n in ["s", "f", "i"] {
        let ns = t.add_child(EventTree::ROOT, n);
        for r in ["r", "v", "a"] {
            let rs = t.add_child(ns, r);
            let stay = t.add_child(rs, "n");
            t.set_leaf_kind(stay, LeafKind::Recurrent);
            let gone = t.add_child(rs, "t");
            t.set_leaf_kind(gone, LeafKind::Terminal);
        }
    }
    t
}

fn radicalisation_vars() -> VarBindings {
    VarBindings {
        invariant: Vec::new(),
        slice: vec![
            ProcessVar { name: "N".into(), states: vec!["s".into(), "f".into(), "i".into()] },
            ProcessVar { name: "R".into(), states: vec!["r".into(), "v".into(), "a".into()] },
            ProcessVar { name: "T".into(), states: vec!["n".into(), "t".into()] },
        ],
    }
}

/// Builds a staged prefix by applying a stage rule to every situation of
/// the unrolled prefix.
pub fn staged_by_rule(
    name: &str,
    tog: TogSpec,
    horizon: usize,
    stages: BTreeMap<StageId, Stage>,
    variables: Option<VarBindings>,
    rule: impl Fn(&Unrolled, usize) -> StageId,
) -> StagedTreePrefix {
    let unrolled = unroll_tog(&tog, horizon + 1).expect("fixture generator is valid");
    let mut assignment = BTreeMap::new();
    for n in unrolled.situations() {
        assignment.insert(unrolled.nodes[n].id.clone(), rule(&unrolled, n));
    }
    StagedTreePrefix { name: name.to_string(), tog, horizon, stages, assignment, variables }
}

/// The 2T-DCEG radicalisation model of a prior-convicted prisoner.
///
/// Fifteen stages: transfer odds depend only on whether the prisoner is
/// adopting; an adopting prisoner's radicalisation transition ignores the
/// current network; network transitions ignore radicalisation; and the
/// non-adopting radicalisation transition forgets whether the prisoner was
/// resilient or vulnerable.
pub fn radicalisation() -> StagedTreePrefix {
    let mut stages = BTreeMap::new();
    let nrl = ["s", "f", "i"];
    let rrl = ["r", "v", "a"];
    let trl = ["n", "t"];
    stages.insert("u0".into(), Stage::new(&nrl, &[0.5, 0.3, 0.2]));
    stages.insert("u1".into(), Stage::new(&rrl, &[0.7, 0.2, 0.1]));
    stages.insert("u2".into(), Stage::new(&rrl, &[0.5, 0.3, 0.2]));
    stages.insert("u3".into(), Stage::new(&rrl, &[0.2, 0.4, 0.4]));
    stages.insert("u4".into(), Stage::new(&trl, &[0.9, 0.1]));
    stages.insert("u5".into(), Stage::new(&trl, &[0.7, 0.3]));
    stages.insert("u6".into(), Stage::new(&nrl, &[0.6, 0.3, 0.1]));
    stages.insert("u7".into(), Stage::new(&nrl, &[0.25, 0.5, 0.25]));
    stages.insert("u8".into(), Stage::new(&nrl, &[0.1, 0.3, 0.6]));
    stages.insert("u9".into(), Stage::new(&rrl, &[0.8, 0.15, 0.05]));
    stages.insert("u10".into(), Stage::new(&rrl, &[0.6, 0.25, 0.15]));
    stages.insert("u11".into(), Stage::new(&rrl, &[0.3, 0.3, 0.4]));
    stages.insert("u12".into(), Stage::new(&rrl, &[0.05, 0.15, 0.8]));
    stages.insert("u13".into(), Stage::new(&trl, &[0.85, 0.15]));
    stages.insert("u14".into(), Stage::new(&trl, &[0.75, 0.25]));

    let n_idx = |v: &str| ["s", "f", "i"].iter().position(|x| *x == v).unwrap();
    staged_by_rule(
        "radicalisation",
        TogSpec::new(None, radicalisation_slice_tree()),
        2,
        stages,
        Some(radicalisation_vars()),
        |u, node| {
            let slice = u.nodes[node].slice;
            let segs = slice_segments(u, node);
            let within = segs.get(&slice).cloned().unwrap_or_default();
            if slice == 0 {
                match within.len() {
                    0 => "u0".into(),
                    1 => format!("u{}", 1 + n_idx(&within[0])),
                    _ => if within[1] == "a" { "u5".into() } else { "u4".into() },
                }
            } else {
                let prev = &segs[&(slice - 1)];
                let adopting_prev = prev[1] == "a";
                match within.len() {
                    0 => format!("u{}", 6 + n_idx(&prev[0])),
                    1 => {
                        if adopting_prev {
                            "u12".into()
                        } else {
                            format!("u{}", 9 + n_idx(&within[0]))
                        }
                    }
                    _ => if within[1] == "a" { "u14".into() } else { "u13".into() },
                }
            }
        },
    )
}

/// The 2T-DCEG radicalisation model of a prisoner without prior conviction.
///
/// Simpler than the convicted panel: sporadic and frequent network contexts
/// are indistinguishable everywhere, and an adopting prisoner's transition
/// is staged together with the intense slice-0 radicalisation distribution.
pub fn panel2() -> StagedTreePrefix {
    let mut stages = BTreeMap::new();
    let nrl = ["s", "f", "i"];
    let rrl = ["r", "v", "a"];
    let trl = ["n", "t"];
    stages.insert("ua".into(), Stage::new(&nrl, &[0.55, 0.3, 0.15]));
    stages.insert("ub".into(), Stage::new(&rrl, &[0.75, 0.2, 0.05]));
    stages.insert("uc".into(), Stage::new(&rrl, &[0.35, 0.35, 0.3]));
    stages.insert("ud".into(), Stage::new(&trl, &[0.95, 0.05]));
    stages.insert("ue".into(), Stage::new(&trl, &[0.85, 0.15]));
    stages.insert("uf".into(), Stage::new(&nrl, &[0.65, 0.25, 0.1]));
    stages.insert("ug".into(), Stage::new(&nrl, &[0.2, 0.35, 0.45]));
    stages.insert("uh".into(), Stage::new(&rrl, &[0.7, 0.22, 0.08]));
    stages.insert("ui".into(), Stage::new(&rrl, &[0.3, 0.4, 0.3]));

    staged_by_rule(
        "panel2",
        TogSpec::new(None, radicalisation_slice_tree()),
        2,
        stages,
        Some(radicalisation_vars()),
        |u, node| {
            let slice = u.nodes[node].slice;
            let segs = slice_segments(u, node);
            let within = segs.get(&slice).cloned().unwrap_or_default();
            if slice == 0 {
                match within.len() {
                    0 => "ua".into(),
                    1 => if within[0] == "i" { "uc".into() } else { "ub".into() },
                    _ => if within[1] == "a" { "ue".into() } else { "ud".into() },
                }
            } else {
                let prev = &segs[&(slice - 1)];
                let adopting_prev = prev[1] == "a";
                match within.len() {
                    0 => if prev[0] == "i" { "ug".into() } else { "uf".into() },
                    1 => {
                        if adopting_prev {
                            "uc".into()
                        } else if within[0] == "i" {
                            "ui".into()
                        } else {
                            "uh".into()
                        }
                    }
                    _ => if within[1] == "a" { "ue".into() } else { "ud".into() },
                }
            }
        },
    )
}

/// Conviction-by-nationality invariant tree of the composite model.
pub fn conviction_tree() -> EventTree {
    let mut t = EventTree::new();
    for c in ["y", "n"] {
        let cs = t.add_child(EventTree::ROOT, c);
        t.add_child(cs, "b");
        t.add_child(cs, "f");
    }
    t
}

/// Merge plan combining the two radicalisation panels: convicted prisoners
/// follow the panel-1 model, the rest panel 2, nationality is retained as a
/// unit feature but drives nothing, and the three agreed stage pairs get
/// jointly reviewed probability vectors.
pub fn example2_plan() -> MergePlan {
    let mut t_minus1_stages = BTreeMap::new();
    t_minus1_stages.insert("t0".to_string(), Stage::new(&["y", "n"], &[0.45, 0.55]));
    t_minus1_stages.insert("t1".to_string(), Stage::new(&["b", "f"], &[0.8, 0.2]));
    t_minus1_stages.insert("t2".to_string(), Stage::new(&["b", "f"], &[0.7, 0.3]));
    let mut t_minus1_assignment = BTreeMap::new();
    t_minus1_assignment.insert(crate::model::tog::SitId::new(-1, vec![]), "t0".to_string());
    t_minus1_assignment.insert(crate::model::tog::SitId::new(-1, vec!["y".into()]), "t1".to_string());
    t_minus1_assignment.insert(crate::model::tog::SitId::new(-1, vec!["n".into()]), "t2".to_string());

    MergePlan {
        name: "radicalisation-composite".into(),
        t_minus1: conviction_tree(),
        t_minus1_stages,
        t_minus1_assignment,
        panels: vec![
            Panel {
                id: "p1".into(),
                leaves: vec![vec!["y".into(), "b".into()], vec!["y".into(), "f".into()]],
                prefix: radicalisation(),
            },
            Panel {
                id: "p2".into(),
                leaves: vec![vec!["n".into(), "b".into()], vec!["n".into(), "f".into()]],
                prefix: panel2(),
            },
        ],
        agreements: vec![
            Agreement {
                a: ("p2".into(), "uc".into()),
                b: ("p1".into(), "u9".into()),
                replacement: Some(vec![0.75, 0.18, 0.07]),
            },
            Agreement {
                a: ("p2".into(), "ue".into()),
                b: ("p1".into(), "u14".into()),
                replacement: Some(vec![0.8, 0.2]),
            },
            Agreement {
                a: ("p2".into(), "ug".into()),
                b: ("p1".into(), "u6".into()),
                replacement: Some(vec![0.55, 0.33, 0.12]),
            },
        ],
    }
}

/// Two binary chains that never interact: variable A and B each follow
/// their own transition law. Used as the plainly stochastically independent
/// fixture.
pub fn parallel_chains() -> StagedTreePrefix {
    let mut slice = EventTree::new();
    for a in ["a0", "a1"] {
        let asit = slice.add_child(EventTree::ROOT, a);
        for b in ["b0", "b1"] {
            let leaf = slice.add_child(asit, b);
            slice.set_leaf_kind(leaf, LeafKind::Recurrent);
        }
    }
    let mut stages = BTreeMap::new();
    let al = ["a0", "a1"];
    let bl = ["b0", "b1"];
    stages.insert("a_init".into(), Stage::new(&al, &[0.6, 0.4]));
    stages.insert("b_init".into(), Stage::new(&bl, &[0.3, 0.7]));
    stages.insert("a_from0".into(), Stage::new(&al, &[0.8, 0.2]));
    stages.insert("a_from1".into(), Stage::new(&al, &[0.35, 0.65]));
    stages.insert("b_from0".into(), Stage::new(&bl, &[0.55, 0.45]));
    stages.insert("b_from1".into(), Stage::new(&bl, &[0.15, 0.85]));

    let vars = VarBindings {
        invariant: Vec::new(),
        slice: vec![
            ProcessVar { name: "A".into(), states: vec!["a0".into(), "a1".into()] },
            ProcessVar { name: "B".into(), states: vec!["b0".into(), "b1".into()] },
        ],
    };
    staged_by_rule(
        "parallel-chains",
        TogSpec::new(None, slice),
        2,
        stages,
        Some(vars),
        |u, node| {
            let slice = u.nodes[node].slice;
            let segs = slice_segments(u, node);
            let within = segs.get(&slice).cloned().unwrap_or_default();
            if slice == 0 {
                if within.is_empty() { "a_init".into() } else { "b_init".into() }
            } else {
                let prev = &segs[&(slice - 1)];
                if within.is_empty() {
                    if prev[0] == "a0" { "a_from0".into() } else { "a_from1".into() }
                } else if prev[1] == "b0" {
                    "b_from0".into()
                } else {
                    "b_from1".into()
                }
            }
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::staging::validate_staging;

    #[test]
    fn fixtures_validate() {
        for prefix in [radicalisation(), panel2(), parallel_chains()] {
            let report = validate_staging(&prefix, 1e-9);
            assert!(report.ok(), "{}: {:?}", prefix.name, report.violations);
        }
    }

    #[test]
    fn radicalisation_prefix_counts() {
        let u = radicalisation().unrolled().unwrap();
        // 13 situations per copy; 1 copy at slice 0, 9 at slice 1, 81 at 2.
        assert_eq!(u.situations().count(), 13 * (1 + 9 + 81));
    }
}
