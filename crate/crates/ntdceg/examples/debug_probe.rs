use ntdceg::fixtures::radicalisation;
use ntdceg::positions::{brute_force_positions, build_ntdceg, compute_positions, restrict_partition};
use ntdceg::sim::{exact_joint, graph_joint};
use ntdceg::DEFAULT_TOL;

fn main() {
    let prefix = radicalisation();
    let refined = compute_positions(&prefix, DEFAULT_TOL).unwrap();
    let oracle = brute_force_positions(&prefix, 5, DEFAULT_TOL).unwrap();
    let got = restrict_partition(&oracle, 2);
    let want = restrict_partition(&refined, 2);
    println!("oracle blocks {} refined blocks {}", got.blocks.len(), want.blocks.len());
    for b in &got.blocks {
        if !want.blocks.contains(b) {
            println!("oracle-only block ({}): {:?}", b.len(), &b[..b.len().min(4)]);
        }
    }
    for b in &want.blocks {
        if !got.blocks.contains(b) {
            println!("refined-only block ({}): {:?}", b.len(), &b[..b.len().min(4)]);
        }
    }

    let model = build_ntdceg(&prefix, DEFAULT_TOL).unwrap();
    let tree = exact_joint(&prefix, 2, DEFAULT_TOL).unwrap();
    let graph = graph_joint(&model, 2).unwrap();
    println!("tree rows {} graph rows {}", tree.rows.len(), graph.rows.len());
    let mut shown = 0;
    for (path, p) in &tree.rows {
        let q = graph.rows.get(path).copied();
        if q.map(|q| (p - q).abs() > 1e-9).unwrap_or(true) {
            println!("mismatch {:?}: tree={p} graph={q:?}", path);
            shown += 1;
            if shown > 5 {
                break;
            }
        }
    }
    for path in graph.rows.keys() {
        if !tree.rows.contains_key(path) {
            println!("graph-only {:?}", path);
            shown += 1;
            if shown > 10 {
                break;
            }
        }
    }
}
