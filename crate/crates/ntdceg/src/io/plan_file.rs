//! Merge-plan file schema: invariant tree with its staging, panel leaf
//! ownership with model file references, and the colour agreement as
//! `panel/stage` pairs with optional replacement vectors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model_file::{load_model, StageFile};
use super::IoError;
use crate::composite::{Agreement, MergePlan, Panel};
use crate::model::staging::Stage;
use crate::model::tog::SitId;
use crate::model::tree::{EventTree, NestedTree};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanFile {
    pub name: String,
    pub t_minus1: NestedTree,
    pub t_minus1_stages: BTreeMap<String, StageFile>,
    pub panels: Vec<PanelFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agreements: Vec<AgreementFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelFile {
    pub id: String,
    /// Dot-joined invariant-tree leaf paths.
    pub leaves: Vec<String>,
    /// Model file path, relative to the plan file.
    pub model_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgreementFile {
    /// `panel/stage`.
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
}

fn parse_scoped(s: &str) -> Result<(String, String), IoError> {
    s.split_once('/')
        .map(|(p, st)| (p.to_string(), st.to_string()))
        .ok_or_else(|| IoError::Schema(format!("agreement entry '{s}' is not panel/stage")))
}

/// Loads a plan and the panel model files it references.
pub fn load_plan(path: &Path) -> Result<MergePlan, IoError> {
    let file: PlanFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    parse_plan_with_base(file, path.parent().unwrap_or(Path::new(".")))
}

pub fn parse_plan(text: &str, base: &Path) -> Result<MergePlan, IoError> {
    let file: PlanFile = serde_json::from_str(text)?;
    parse_plan_with_base(file, base)
}

fn parse_plan_with_base(file: PlanFile, base: &Path) -> Result<MergePlan, IoError> {
    let mut t_minus1_stages = BTreeMap::new();
    let mut t_minus1_assignment = BTreeMap::new();
    for (id, sf) in file.t_minus1_stages {
        for sit in &sf.situations {
            let sit = SitId::try_from(sit.clone()).map_err(IoError::Schema)?;
            t_minus1_assignment.insert(sit, id.clone());
        }
        t_minus1_stages.insert(
            id,
            Stage { label_order: sf.label_order, probs: sf.probs, bijections: BTreeMap::new() },
        );
    }
    let panels = file
        .panels
        .into_iter()
        .map(|p| {
            let prefix = load_model(&base.join(&p.model_path))?;
            let leaves = p
                .leaves
                .iter()
                .map(|l| {
                    if l.is_empty() {
                        Vec::new()
                    } else {
                        l.split('.').map(|s| s.to_string()).collect()
                    }
                })
                .collect();
            Ok(Panel { id: p.id, leaves, prefix })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    let agreements = file
        .agreements
        .into_iter()
        .map(|a| {
            Ok(Agreement {
                a: parse_scoped(&a.a)?,
                b: parse_scoped(&a.b)?,
                replacement: a.probs,
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    Ok(MergePlan {
        name: file.name,
        t_minus1: EventTree::from_nested(&file.t_minus1),
        t_minus1_stages,
        t_minus1_assignment,
        panels,
        agreements,
    })
}

/// Renders a plan; panel models are written next to it as
/// `{panel id}.model.json`.
pub fn render_plan(plan: &MergePlan) -> (String, Vec<(String, String)>) {
    let mut stage_files = BTreeMap::new();
    for (id, stage) in &plan.t_minus1_stages {
        let situations: Vec<String> = plan
            .t_minus1_assignment
            .iter()
            .filter(|(_, s)| *s == id)
            .map(|(sit, _)| sit.to_string())
            .collect();
        stage_files.insert(
            id.clone(),
            StageFile {
                situations,
                label_order: stage.label_order.clone(),
                probs: stage.probs.clone(),
                bijections: BTreeMap::new(),
            },
        );
    }
    let mut models = Vec::new();
    let panels = plan
        .panels
        .iter()
        .map(|p| {
            let path = format!("{}.model.json", p.id);
            models.push((path.clone(), super::model_file::render_model(&p.prefix)));
            PanelFile {
                id: p.id.clone(),
                leaves: p.leaves.iter().map(|l| l.join(".")).collect(),
                model_path: path,
            }
        })
        .collect();
    let file = PlanFile {
        name: plan.name.clone(),
        t_minus1: plan.t_minus1.to_nested(),
        t_minus1_stages: stage_files,
        panels,
        agreements: plan
            .agreements
            .iter()
            .map(|a| AgreementFile {
                a: format!("{}/{}", a.a.0, a.a.1),
                b: format!("{}/{}", a.b.0, a.b.1),
                probs: a.replacement.clone(),
            })
            .collect(),
    };
    (serde_json::to_string_pretty(&file).expect("plan serializes"), models)
}
