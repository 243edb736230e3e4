//! Domain types: event trees, the periodic generator, staged prefixes.

pub mod staging;
pub mod tog;
pub mod tree;

pub use staging::{Stage, StagedTreePrefix, StageId, StagingReport, VarBindings};
pub use tog::{unroll_tog, SitId, TogSpec, Unrolled};
pub use tree::{validate_event_tree, EventTree, Label, LeafKind, TreeReport};
