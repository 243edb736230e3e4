//! Model file schema: trees as nested label maps, staging as
//! `{stage: {situations, label_order, probs}}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::model::staging::{Stage, StagedTreePrefix, VarBindings};
use crate::model::tog::{SitId, TogSpec};
use crate::model::tree::{EventTree, NestedTree};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub name: String,
    pub order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_minus1: Option<NestedTree>,
    pub t_slice: NestedTree,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variables: Option<VarBindings>,
    pub stages: BTreeMap<String, StageFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageFile {
    pub situations: Vec<String>,
    pub label_order: Vec<String>,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bijections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ModelFile {
    pub fn from_prefix(prefix: &StagedTreePrefix) -> Self {
        let mut stages: BTreeMap<String, StageFile> = prefix
            .stages
            .iter()
            .map(|(id, s)| {
                (
                    id.clone(),
                    StageFile {
                        situations: Vec::new(),
                        label_order: s.label_order.clone(),
                        probs: s.probs.clone(),
                        bijections: s
                            .bijections
                            .iter()
                            .map(|(sit, m)| (sit.to_string(), m.clone()))
                            .collect(),
                    },
                )
            })
            .collect();
        for (sit, stage) in &prefix.assignment {
            if let Some(entry) = stages.get_mut(stage) {
                entry.situations.push(sit.to_string());
            }
        }
        ModelFile {
            name: prefix.name.clone(),
            order: prefix.horizon,
            t_minus1: prefix.tog.t_minus1.as_ref().map(|t| t.to_nested()),
            t_slice: prefix.tog.t_slice.to_nested(),
            variables: prefix.variables.clone(),
            stages,
        }
    }

    pub fn into_prefix(self) -> Result<StagedTreePrefix, IoError> {
        let mut stages = BTreeMap::new();
        let mut assignment = BTreeMap::new();
        for (id, sf) in self.stages {
            let mut bijections = BTreeMap::new();
            for (sit, m) in sf.bijections {
                let sit = SitId::try_from(sit).map_err(IoError::Schema)?;
                bijections.insert(sit, m);
            }
            for sit in sf.situations {
                let sit = SitId::try_from(sit).map_err(IoError::Schema)?;
                if let Some(previous) = assignment.insert(sit, id.clone()) {
                    if previous != id {
                        return Err(IoError::Schema(format!(
                            "a situation is listed under both {previous} and {id}"
                        )));
                    }
                }
            }
            stages.insert(id, Stage { label_order: sf.label_order, probs: sf.probs, bijections });
        }
        Ok(StagedTreePrefix {
            name: self.name,
            tog: TogSpec::new(
                self.t_minus1.as_ref().map(EventTree::from_nested),
                EventTree::from_nested(&self.t_slice),
            ),
            horizon: self.order,
            stages,
            assignment,
            variables: self.variables,
        })
    }
}

pub fn parse_model(text: &str) -> Result<StagedTreePrefix, IoError> {
    let file: ModelFile = serde_json::from_str(text)?;
    file.into_prefix()
}

pub fn render_model(prefix: &StagedTreePrefix) -> String {
    serde_json::to_string_pretty(&ModelFile::from_prefix(prefix)).expect("model serializes")
}

pub fn load_model(path: &Path) -> Result<StagedTreePrefix, IoError> {
    parse_model(&std::fs::read_to_string(path)?)
}

pub fn save_model(prefix: &StagedTreePrefix, path: &Path) -> Result<(), IoError> {
    Ok(std::fs::write(path, render_model(prefix) + "\n")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn round_trip_is_identity() {
        let prefix = fixtures::radicalisation();
        let text = render_model(&prefix);
        let parsed = parse_model(&text).unwrap();
        assert_eq!(parsed, prefix);
        let again = parse_model(&render_model(&parsed)).unwrap();
        assert_eq!(again, parsed);
    }
}
