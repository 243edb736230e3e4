//! File schemas (JSON) and DOT export.
//!
//! Three document kinds: model files (trees as nested label maps plus the
//! stage table), DBN files (variables, parent lists, CPT rows keyed by
//! parent configuration), and merge-plan files (invariant tree, panel
//! ownership, colour agreement). Round-tripping a parsed document through
//! serialization yields an identical parse; byte identity is not promised.

pub mod dbn_file;
pub mod dot;
pub mod model_file;
pub mod plan_file;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema: {0}")]
    Schema(String),
}

pub use dbn_file::{load_dbn, parse_dbn, render_dbn, save_dbn};
pub use dot::{ceg_dot, ntdceg_dot};
pub use model_file::{load_model, parse_model, render_model, save_model};
pub use plan_file::{load_plan, parse_plan, render_plan};
