use ntdceg::fixtures::radicalisation;
use ntdceg::graph::{EdgeKind, EdgeTarget};
use ntdceg::positions::build_ntdceg;
use ntdceg::DEFAULT_TOL;

fn main() {
    let model = build_ntdceg(&radicalisation(), DEFAULT_TOL).unwrap();
    for p in &model.positions {
        println!("pos {} {:?} depth {} stage {} name {} members {}", p.id, p.slice, p.within_depth, p.stage, p.name, p.members.len());
        for e in model.out_edges(p.id) {
            let to = match e.to {
                EdgeTarget::Position(q) => format!("w{q}[{}]", model.positions[q].name),
                EdgeTarget::SliceSink(t) => format!("sink@{t}"),
                EdgeTarget::GlobalSink => "sink".into(),
            };
            println!("   -{}-> {}  p={} kind={:?}", e.label, to, e.prob, e.kind);
        }
    }
}
