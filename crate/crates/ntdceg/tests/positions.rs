//! Position refinement, graph construction and CEG unrolling, checked
//! against the radicalisation fixtures and the subtree-comparison oracle.

use std::collections::{BTreeMap, BTreeSet};

use ntdceg::fixtures::{panel2, radicalisation};
use ntdceg::graph::{EdgeKind, EdgeTarget, SliceClass};
use ntdceg::model::staging::slice_segments;
use ntdceg::model::tog::{unroll_tog, SitId};
use ntdceg::positions::{
    brute_force_positions, build_ntdceg, compute_positions, restrict_partition, unroll_to_ceg,
    TPositionPartition,
};
use ntdceg::sim::{exact_joint, graph_joint};
use ntdceg::DEFAULT_TOL;

/// Radicalisation-class of a value of R: adopting or not.
fn adopting(r: &str) -> bool {
    r == "a"
}

/// Independent transcription of the published stage/position structure:
/// the semantic feature that determines a situation's position.
fn radicalisation_feature(sit: &SitId, segs: &BTreeMap<i32, Vec<String>>) -> String {
    let within = segs.get(&sit.slice).cloned().unwrap_or_default();
    if sit.slice == 0 {
        match within.len() {
            0 => "root".into(),
            1 => format!("nsit0:{}", within[0]),
            _ => format!("tsit0:{}:{}", within[0], adopting(&within[1])),
        }
    } else {
        let prev = &segs[&(sit.slice - 1)];
        match within.len() {
            0 => format!("entry:{}:{}", prev[0], adopting(&prev[1])),
            1 => format!("rsit:{}:{}", adopting(&prev[1]), within[0]),
            _ => format!("tsit:{}:{}", within[0], adopting(&within[1])),
        }
    }
}

fn expected_radicalisation_partition() -> TPositionPartition {
    let prefix = radicalisation();
    let unrolled = prefix.unrolled().unwrap();
    let mut groups: BTreeMap<String, Vec<SitId>> = BTreeMap::new();
    for n in unrolled.situations() {
        let sit = unrolled.nodes[n].id.clone();
        let segs = slice_segments(&unrolled, n);
        groups.entry(radicalisation_feature(&sit, &segs)).or_default().push(sit);
    }
    TPositionPartition::from_blocks(groups.into_values().collect())
}

#[test]
fn radicalisation_positions_match_published_structure() {
    let prefix = radicalisation();
    let computed = compute_positions(&prefix, DEFAULT_TOL).unwrap();
    let expected = expected_radicalisation_partition();
    assert_eq!(computed.blocks.len(), 28);
    assert_eq!(computed, expected);
}

#[test]
fn radicalisation_stage_blocks_match_caption() {
    let prefix = radicalisation();
    let model = build_ntdceg(&prefix, DEFAULT_TOL).unwrap();
    assert_eq!(model.positions.len(), 28);

    // Stage -> set of positions, named by the semantic feature.
    let unrolled = prefix.unrolled().unwrap();
    let feature_of_sit: BTreeMap<SitId, String> = unrolled
        .situations()
        .map(|n| {
            let sit = unrolled.nodes[n].id.clone();
            let segs = slice_segments(&unrolled, n);
            let f = radicalisation_feature(&sit, &segs);
            (sit, f)
        })
        .collect();
    let mut stage_to_features: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for p in &model.positions {
        let f = feature_of_sit[&p.members[0]].as_str();
        // Every member of a position carries the same feature.
        for m in &p.members {
            assert_eq!(feature_of_sit[m].as_str(), f);
        }
        stage_to_features.entry(p.stage.as_str()).or_default().insert(f);
    }

    let expect = |stage: &str, features: &[&str]| {
        let want: BTreeSet<&str> = features.iter().copied().collect();
        assert_eq!(stage_to_features[stage], want, "stage {stage}");
    };
    expect("u0", &["root"]);
    expect("u1", &["nsit0:s"]);
    expect("u2", &["nsit0:f"]);
    expect("u3", &["nsit0:i"]);
    expect("u4", &["tsit0:s:false", "tsit0:f:false", "tsit0:i:false"]);
    expect("u5", &["tsit0:s:true", "tsit0:f:true", "tsit0:i:true"]);
    expect("u6", &["entry:s:false", "entry:s:true"]);
    expect("u7", &["entry:f:false", "entry:f:true"]);
    expect("u8", &["entry:i:false", "entry:i:true"]);
    expect("u9", &["rsit:false:s"]);
    expect("u10", &["rsit:false:f"]);
    expect("u11", &["rsit:false:i"]);
    expect("u12", &["rsit:true:s", "rsit:true:f", "rsit:true:i"]);
    expect("u13", &["tsit:s:false", "tsit:f:false", "tsit:i:false"]);
    expect("u14", &["tsit:s:true", "tsit:f:true", "tsit:i:true"]);

    // Block-size multiset of the 15 stages.
    let mut sizes: Vec<usize> = stage_to_features.values().map(|v| v.len()).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 3, 3, 3, 3, 3]);
}

#[test]
fn panel2_positions_match_published_structure() {
    let prefix = panel2();
    let model = build_ntdceg(&prefix, DEFAULT_TOL).unwrap();
    assert_eq!(model.positions.len(), 19);
    // Positions per stage, as the figure caption lists them (the two
    // unlisted non-adopting transition positions are singleton stages).
    let mut per_stage: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &model.positions {
        *per_stage.entry(p.stage.as_str()).or_default() += 1;
    }
    let want: BTreeMap<&str, usize> = [
        ("ua", 1),
        ("ub", 1),
        ("uc", 3),
        ("ud", 4),
        ("ue", 4),
        ("uf", 2),
        ("ug", 2),
        ("uh", 1),
        ("ui", 1),
    ]
    .into_iter()
    .collect();
    assert_eq!(per_stage, want);
}

#[test]
fn radicalisation_graph_shape() {
    let model = build_ntdceg(&radicalisation(), DEFAULT_TOL).unwrap();
    assert_eq!(model.initial_positions().count(), 10);
    assert_eq!(model.homogeneous_positions().count(), 18);
    assert_eq!(model.slice_sinks, vec![0]);
    assert!(model.has_global_sink);

    // Cyclical temporal edges run from the remain-in-prison outcomes into
    // the six entry positions.
    let entries: BTreeSet<usize> = model
        .homogeneous_positions()
        .filter(|p| p.within_depth == 0)
        .map(|p| p.id)
        .collect();
    assert_eq!(entries.len(), 6);
    for e in model.cyclical_edges() {
        assert_eq!(e.label, "n");
        match e.to {
            EdgeTarget::Position(p) => assert!(entries.contains(&p)),
            _ => panic!("cyclical edge into a sink"),
        }
    }
    assert_eq!(model.cyclical_edges().count(), 6);
    // Six temporal edges from the slice-0 transfer situations.
    assert_eq!(model.temporal_edges().count(), 6);

    // Outgoing probabilities sum to one at every position.
    for p in &model.positions {
        let total: f64 = model.out_edges(p.id).map(|e| e.prob).sum();
        assert!((total - 1.0).abs() <= 1e-12, "position {} sums to {}", p.name, total);
    }
}

#[test]
fn initial_subgraph_is_acyclic_and_cycles_need_cyclical_edges() {
    for model in [
        build_ntdceg(&radicalisation(), DEFAULT_TOL).unwrap(),
        build_ntdceg(&panel2(), DEFAULT_TOL).unwrap(),
    ] {
        // Remove cyclical edges; the rest must be a DAG (checked by Kahn).
        let n = model.positions.len();
        let mut indeg = vec![0usize; n];
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &model.edges {
            if e.kind == EdgeKind::Cyclical {
                continue;
            }
            if let EdgeTarget::Position(q) = e.to {
                adj[e.from].push(q);
                indeg[q] += 1;
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &q in &adj[v] {
                indeg[q] -= 1;
                if indeg[q] == 0 {
                    queue.push(q);
                }
            }
        }
        assert_eq!(seen, n, "graph minus cyclical edges has a cycle");
        // D_I contains no cyclical edges at all.
        for e in model.cyclical_edges() {
            assert_eq!(model.positions[e.from].slice, SliceClass::Homogeneous);
        }
    }
}

#[test]
fn prefix_stability_under_deeper_unrolls() {
    let prefix = radicalisation();
    let d3 = unroll_tog(&prefix.tog, 3).unwrap();
    let d4 = unroll_tog(&prefix.tog, 4).unwrap();
    for n in d3.situations() {
        let id = &d3.nodes[n].id;
        let m = d4.by_id(id).expect("prefix situation survives deeper unroll");
        assert_eq!(d4.nodes[m].slice, d3.nodes[n].slice);
        assert_eq!(d4.nodes[m].within, d3.nodes[n].within);
    }
}

#[test]
fn leaf_counts_follow_the_recurrence() {
    // L_{d+1} = L_d - R_d + R_d * L_1 with L_1 = 18, R growing by 9.
    let prefix = radicalisation();
    let mut expected_leaves = 18u64;
    let mut rec = 9u64;
    let mut counts = vec![expected_leaves];
    for _ in 1..5 {
        expected_leaves = expected_leaves - rec + rec * 18;
        rec *= 9;
        counts.push(expected_leaves);
    }
    for (d, want) in counts.iter().enumerate() {
        let u = unroll_tog(&prefix.tog, d + 1).unwrap();
        assert_eq!(u.leaves().count() as u64, *want, "depth {}", d + 1);
    }
    // Depth 2 resolves the derived expansion count.
    assert_eq!(counts[1], 171);
}

#[test]
fn brute_force_oracle_agrees_on_radicalisation() {
    let prefix = radicalisation();
    let refined = compute_positions(&prefix, DEFAULT_TOL).unwrap();
    // Compare on the prefix slices with a two-slice lookahead.
    let oracle = brute_force_positions(&prefix, 5, 2, DEFAULT_TOL).unwrap();
    let want = restrict_partition(&refined, 2);
    assert_eq!(oracle, want);
}

#[test]
fn quotient_preserves_path_probabilities() {
    for prefix in [radicalisation(), panel2()] {
        let model = build_ntdceg(&prefix, DEFAULT_TOL).unwrap();
        for slices in [1usize, 2, 3] {
            let tree = exact_joint(&prefix, slices, DEFAULT_TOL).unwrap();
            let graph = graph_joint(&model, slices).unwrap();
            assert_eq!(tree.rows.len(), graph.rows.len());
            for (path, p) in &tree.rows {
                let q = graph.rows.get(path).copied().unwrap_or(-1.0);
                assert!((p - q).abs() <= 1e-9, "path {path:?}: {p} vs {q}");
            }
            assert!((tree.total() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn exact_joint_row_count_matches_expansion() {
    let prefix = radicalisation();
    let joint = exact_joint(&prefix, 2, DEFAULT_TOL).unwrap();
    assert_eq!(joint.rows.len(), 171);
}

#[test]
fn ceg_two_slices_contracts_adopting_transitions() {
    let prefix = radicalisation();
    let model = build_ntdceg(&prefix, DEFAULT_TOL).unwrap();
    let ceg = unroll_to_ceg(&model, 2).unwrap();

    // The three adopting-transition positions collapse into one CEG vertex
    // at the final slice; entry positions stay separate.
    let rsit_adopting: Vec<usize> = model
        .homogeneous_positions()
        .filter(|p| p.within_depth == 1 && p.stage == "u12")
        .map(|p| p.id)
        .collect();
    assert_eq!(rsit_adopting.len(), 3);
    let vertices: BTreeSet<usize> = rsit_adopting
        .iter()
        .map(|&p| ceg.vertex_of(1, p).expect("reachable at slice 1"))
        .collect();
    assert_eq!(vertices.len(), 1);

    let entries: Vec<usize> = model
        .homogeneous_positions()
        .filter(|p| p.within_depth == 0)
        .map(|p| p.id)
        .collect();
    let entry_vertices: BTreeSet<usize> =
        entries.iter().map(|&p| ceg.vertex_of(1, p).unwrap()).collect();
    assert_eq!(entry_vertices.len(), 6);

    // Non-adopting transition positions also stay separate (their stages
    // differ), while the transfer positions collapse by stage.
    let tsits: Vec<(usize, String)> = model
        .homogeneous_positions()
        .filter(|p| p.within_depth == 2)
        .map(|p| (p.id, p.stage.clone()))
        .collect();
    let t_vertices: BTreeSet<(usize, String)> = tsits
        .iter()
        .map(|(p, stage)| (ceg.vertex_of(1, *p).unwrap(), stage.clone()))
        .collect();
    assert_eq!(t_vertices.len(), 2);
}

#[test]
fn ceg_path_probabilities_match_tree() {
    let prefix = radicalisation();
    let model = build_ntdceg(&prefix, DEFAULT_TOL).unwrap();
    for slices in [1usize, 2, 3] {
        let ceg = unroll_to_ceg(&model, slices).unwrap();
        let want = exact_joint(&prefix, slices, DEFAULT_TOL).unwrap();
        let got = ceg.path_probs();
        assert_eq!(got.len(), want.rows.len(), "slices={slices}");
        for (path, p) in &want.rows {
            let q = got.get(path).copied().unwrap_or(-1.0);
            assert!((p - q).abs() <= 1e-9, "slices={slices} path {path:?}");
        }
    }
}

#[test]
fn ceg_one_slice_matches_contracted_initial_graph() {
    let model = build_ntdceg(&radicalisation(), DEFAULT_TOL).unwrap();
    let ceg = unroll_to_ceg(&model, 1).unwrap();
    // Root, three network positions, and the transfer situations collapsed
    // into the two transfer stages.
    assert_eq!(ceg.positions.len(), 1 + 3 + 2);
}

#[test]
fn ceg_partitions_refine_with_longer_futures() {
    let model = build_ntdceg(&radicalisation(), DEFAULT_TOL).unwrap();
    let c2 = unroll_to_ceg(&model, 2).unwrap();
    let c3 = unroll_to_ceg(&model, 3).unwrap();
    // Over copies at slices 0..1, C3's partition refines C2's.
    let mut copies: Vec<(i32, usize)> = Vec::new();
    for p in &c2.positions {
        copies.extend(p.members.iter().copied().filter(|(t, _)| *t <= 1));
    }
    for (a_i, a) in copies.iter().enumerate() {
        for b in copies.iter().skip(a_i + 1) {
            let same_in_c3 = c3.vertex_of(a.0, a.1) == c3.vertex_of(b.0, b.1);
            let same_in_c2 = c2.vertex_of(a.0, a.1) == c2.vertex_of(b.0, b.1);
            if same_in_c3 {
                assert!(same_in_c2, "C3 merges {a:?} {b:?} but C2 does not");
            }
        }
    }
}

#[test]
fn mirrored_subtrees_with_shared_colours_merge() {
    // Root branches on m0/m1 into structurally identical, identically
    // coloured subtrees; the two children must land in one position.
    use ntdceg::fixtures::staged_by_rule;
    use ntdceg::model::staging::Stage;
    use ntdceg::model::tog::TogSpec;
    use ntdceg::model::tree::{EventTree, LeafKind};

    let mut slice = EventTree::new();
    for m in ["m0", "m1"] {
        let s = slice.add_child(EventTree::ROOT, m);
        for v in ["x", "y"] {
            let leaf = slice.add_child(s, v);
            slice.set_leaf_kind(leaf, LeafKind::Recurrent);
        }
    }
    let mut stages = std::collections::BTreeMap::new();
    stages.insert("root".to_string(), Stage::new(&["m0", "m1"], &[0.5, 0.5]));
    stages.insert("mid".to_string(), Stage::new(&["x", "y"], &[0.3, 0.7]));
    let prefix = staged_by_rule("mirror", TogSpec::new(None, slice), 2, stages, None, |u, n| {
        // Entry situations sit at even path lengths, mid situations at odd.
        if u.nodes[n].id.path.len() % 2 == 0 {
            "root".into()
        } else {
            "mid".into()
        }
    });
    let partition = compute_positions(&prefix, DEFAULT_TOL).unwrap();
    let a = SitId::new(0, vec!["m0".into()]);
    let b = SitId::new(0, vec!["m1".into()]);
    assert!(partition.same_block(&a, &b));
}
