//! N time-slice dynamic chain event graphs (NT-DCEGs).
//!
//! An NT-DCEG is a finite cyclic graph that packages an infinite, periodic
//! staged tree: a time-invariant prefix tree describes unit types, a
//! per-slice event tree is unfolded from every recurrent leaf, and a stage
//! partition with primitive probabilities colours the situations. This crate
//! builds the graph from a staged prefix, converts discrete dynamic Bayesian
//! networks into the same form, extracts the intrinsic random variables of
//! cuts and fine cuts, answers local/contemporaneous/stochastic independence
//! and Granger-noncausality queries, and merges panel-built models into a
//! composite. Everything is desk-scale and exact: brute-force enumeration
//! oracles back each construction.
//!
//! Entry points:
//! - [`model`]: event trees, the periodic tree generator, staged prefixes.
//! - [`positions`]: T-position refinement, [`graph::Ntdceg`] construction,
//!   CEG unrolling, and the subtree-comparison oracle.
//! - [`dbn`]: DBN specs and their conversion to stratified staged prefixes.
//! - [`cuts`]: cut / fine-cut verification and the X, Q, Z variables.
//! - [`indep`]: independence and Granger queries on stratified models.
//! - [`composite`]: panel merging.
//! - [`sim`]: seeded trajectory sampling and exact joint enumeration.
//! - [`io`]: JSON schemas for model, DBN and merge-plan files, DOT export.

pub mod composite;
pub mod cuts;
pub mod dbn;
pub mod fixtures;
pub mod graph;
pub mod indep;
pub mod io;
pub mod model;
pub mod positions;
pub mod random;
pub mod sim;
pub mod walks;

pub use graph::{Ceg, EdgeKind, EdgeTarget, GraphEdge, Ntdceg, Position, PositionId};
pub use model::staging::{Stage, StagedTreePrefix, StagingReport};
pub use model::tog::{SitId, TogSpec, Unrolled};
pub use model::tree::{EventTree, LeafKind, TreeReport};

/// Default equality tolerance for probability comparisons.
///
/// Exact enumeration at desk scale loses at most a few ulps, so a uniform
/// 1e-9 keeps stage-equality and factorization checks robust without hiding
/// genuine modelling differences. Every comparing operation takes the
/// tolerance as an argument; this is only the conventional default.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Upper bound on enumerated objects (paths, walks, histories) before an
/// operation refuses to run. Oracles are meant for desk-scale models.
pub const SIZE_GUARD: usize = 1_000_000;
