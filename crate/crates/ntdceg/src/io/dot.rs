//! DOT (graphviz) export.
//!
//! Positions are nodes filled by stage colour, edges carry "label : prob",
//! temporal and cyclical temporal edges are dashed, and the initial and
//! homogeneous subgraphs sit in their own cluster boxes.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::graph::{Ceg, EdgeKind, EdgeTarget, Ntdceg};

const PALETTE: [&str; 12] = [
    "#a6cee3", "#1f78b4", "#b2df8a", "#33a02c", "#fb9a99", "#e31a1c",
    "#fdbf6f", "#ff7f00", "#cab2d6", "#6a3d9a", "#ffff99", "#b15928",
];

fn stage_colours<'a>(stages: impl Iterator<Item = &'a String>) -> BTreeMap<&'a String, &'static str> {
    stages
        .enumerate()
        .map(|(i, s)| (s, PALETTE[i % PALETTE.len()]))
        .collect()
}

pub fn ntdceg_dot(model: &Ntdceg) -> String {
    let colours = stage_colours(model.prefix.stages.keys());
    let mut out = String::new();
    writeln!(out, "digraph ntdceg {{").unwrap();
    writeln!(out, "  rankdir=LR;").unwrap();
    writeln!(out, "  node [shape=circle, style=filled, fontsize=10];").unwrap();

    writeln!(out, "  subgraph cluster_initial {{").unwrap();
    writeln!(out, "    label=\"D_I\";").unwrap();
    for p in model.initial_positions() {
        writeln!(
            out,
            "    w{} [label=\"w{}\\n{}\", fillcolor=\"{}\", tooltip=\"{}\"];",
            p.id, p.id, p.stage, colours[&p.stage], p.name
        )
        .unwrap();
    }
    for t in &model.slice_sinks {
        writeln!(out, "    sink_t{t} [label=\"w_inf^{t}\", shape=doublecircle, fillcolor=white];")
            .unwrap();
    }
    writeln!(out, "  }}").unwrap();

    writeln!(out, "  subgraph cluster_homogeneous {{").unwrap();
    writeln!(out, "    label=\"D_H\";").unwrap();
    for p in model.homogeneous_positions() {
        writeln!(
            out,
            "    w{} [label=\"w{}\\n{}\", fillcolor=\"{}\", tooltip=\"{}\"];",
            p.id, p.id, p.stage, colours[&p.stage], p.name
        )
        .unwrap();
    }
    if model.has_global_sink {
        writeln!(out, "    sink [label=\"w_inf\", shape=doublecircle, fillcolor=white];").unwrap();
    }
    writeln!(out, "  }}").unwrap();

    for e in &model.edges {
        let to = match e.to {
            EdgeTarget::Position(p) => format!("w{p}"),
            EdgeTarget::SliceSink(t) => format!("sink_t{t}"),
            EdgeTarget::GlobalSink => "sink".to_string(),
        };
        let style = match e.kind {
            EdgeKind::Within => "solid",
            EdgeKind::Temporal(_) | EdgeKind::Cyclical => "dashed",
        };
        writeln!(out, "  w{} -> {} [label=\"{} : {}\", style={}];", e.from, to, e.label, e.prob, style)
            .unwrap();
    }
    writeln!(out, "}}").unwrap();
    out
}

pub fn ceg_dot(ceg: &Ceg) -> String {
    let mut stage_ids: Vec<&String> = ceg.positions.iter().map(|p| &p.stage).collect();
    stage_ids.sort();
    stage_ids.dedup();
    let colours = stage_colours(stage_ids.into_iter());
    let mut out = String::new();
    writeln!(out, "digraph ceg {{").unwrap();
    writeln!(out, "  rankdir=LR;").unwrap();
    writeln!(out, "  node [shape=circle, style=filled, fontsize=10];").unwrap();
    for p in &ceg.positions {
        let slices: Vec<String> = {
            let mut s: Vec<i32> = p.members.iter().map(|(t, _)| *t).collect();
            s.sort_unstable();
            s.dedup();
            s.into_iter().map(|t| t.to_string()).collect()
        };
        writeln!(
            out,
            "  c{} [label=\"c{}\\n{}\\nt={}\", fillcolor=\"{}\"];",
            p.id,
            p.id,
            p.stage,
            slices.join(","),
            colours[&p.stage]
        )
        .unwrap();
    }
    writeln!(out, "  sink [label=\"w_inf\", shape=doublecircle, fillcolor=white];").unwrap();
    for e in &ceg.edges {
        let to = match e.to {
            Some(p) => format!("c{p}"),
            None => "sink".to_string(),
        };
        writeln!(out, "  c{} -> {} [label=\"{} : {}\"];", e.from, to, e.label, e.prob).unwrap();
    }
    writeln!(out, "}}").unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_cycles() {
        let names: Vec<String> = (0..30).map(|i| format!("u{i}")).collect();
        let colours = stage_colours(names.iter());
        assert_eq!(colours.len(), 30);
    }
}
