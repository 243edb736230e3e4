//! DBN file schema: ordered variables with state lists, per-slice parent
//! lists (`"R"` contemporaneous, `"R@-1"` one slice back, `"U"` invariant),
//! and CPT rows keyed by the parent configuration joined with `|`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::dbn::{Cpd, DbnSpec, DbnVar, ParentRef, SliceModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DbnFile {
    pub name: String,
    pub order: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub invariant_variables: Vec<VarFile>,
    pub slice_variables: Vec<VarFile>,
    pub initial: Vec<SliceFile>,
    pub homogeneous: SliceFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarFile {
    pub name: String,
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terminal: Vec<String>,
    /// Present on invariant variables only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpd: Option<CpdFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceFile {
    pub cpds: Vec<CpdFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpdFile {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
    pub table: BTreeMap<String, Vec<f64>>,
}

fn parse_parent(spec: &str, dbn_invariant: &[DbnVar], dbn_slice: &[DbnVar]) -> Result<ParentRef, IoError> {
    let (name, lag) = match spec.split_once("@-") {
        Some((name, lag)) => {
            let lag: usize = lag
                .parse()
                .map_err(|_| IoError::Schema(format!("bad lag in parent '{spec}'")))?;
            (name, lag)
        }
        None => (spec, 0),
    };
    if lag == 0 {
        if let Some(i) = dbn_invariant.iter().position(|v| v.name == name) {
            return Ok(ParentRef::Invariant { invariant: i });
        }
    }
    let var = dbn_slice
        .iter()
        .position(|v| v.name == name)
        .ok_or_else(|| IoError::Schema(format!("unknown parent variable '{name}'")))?;
    Ok(ParentRef::Lagged { var, lag })
}

fn render_parent(p: &ParentRef, invariant: &[DbnVar], slice: &[DbnVar]) -> String {
    match p {
        ParentRef::Invariant { invariant: i } => invariant[*i].name.clone(),
        ParentRef::Lagged { var, lag: 0 } => slice[*var].name.clone(),
        ParentRef::Lagged { var, lag } => format!("{}@-{}", slice[*var].name, lag),
    }
}

fn parse_cpd(file: &CpdFile, invariant: &[DbnVar], slice: &[DbnVar]) -> Result<Cpd, IoError> {
    let parents = file
        .parents
        .iter()
        .map(|p| parse_parent(p, invariant, slice))
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = BTreeMap::new();
    for (key, row) in &file.table {
        let config: Vec<String> = if key.is_empty() {
            Vec::new()
        } else {
            key.split('|').map(|s| s.to_string()).collect()
        };
        if config.len() != parents.len() {
            return Err(IoError::Schema(format!(
                "table key '{key}' has {} values for {} parents",
                config.len(),
                parents.len()
            )));
        }
        table.insert(config, row.clone());
    }
    Ok(Cpd { parents, table })
}

fn render_cpd(cpd: &Cpd, invariant: &[DbnVar], slice: &[DbnVar]) -> CpdFile {
    CpdFile {
        parents: cpd.parents.iter().map(|p| render_parent(p, invariant, slice)).collect(),
        table: cpd.table.iter().map(|(k, v)| (k.join("|"), v.clone())).collect(),
    }
}

fn parse_var(v: &VarFile) -> DbnVar {
    DbnVar {
        name: v.name.clone(),
        states: v.states.clone(),
        terminal: v.terminal.iter().cloned().collect::<BTreeSet<_>>(),
    }
}

impl DbnFile {
    pub fn into_spec(self) -> Result<DbnSpec, IoError> {
        let invariant_vars: Vec<DbnVar> = self.invariant_variables.iter().map(parse_var).collect();
        let slice_vars: Vec<DbnVar> = self.slice_variables.iter().map(parse_var).collect();
        let invariant_cpds = self
            .invariant_variables
            .iter()
            .map(|v| {
                let cpd = v
                    .cpd
                    .as_ref()
                    .ok_or_else(|| IoError::Schema(format!("invariant variable {} lacks a cpd", v.name)))?;
                parse_cpd(cpd, &invariant_vars, &slice_vars)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let initial = self
            .initial
            .iter()
            .map(|s| {
                Ok(SliceModel {
                    cpds: s
                        .cpds
                        .iter()
                        .map(|c| parse_cpd(c, &invariant_vars, &slice_vars))
                        .collect::<Result<Vec<_>, IoError>>()?,
                })
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        let homogeneous = SliceModel {
            cpds: self
                .homogeneous
                .cpds
                .iter()
                .map(|c| parse_cpd(c, &invariant_vars, &slice_vars))
                .collect::<Result<Vec<_>, IoError>>()?,
        };
        Ok(DbnSpec {
            name: self.name,
            order: self.order,
            invariant_vars,
            invariant_cpds,
            slice_vars,
            initial,
            homogeneous,
        })
    }

    pub fn from_spec(dbn: &DbnSpec) -> Self {
        DbnFile {
            name: dbn.name.clone(),
            order: dbn.order,
            invariant_variables: dbn
                .invariant_vars
                .iter()
                .zip(&dbn.invariant_cpds)
                .map(|(v, c)| VarFile {
                    name: v.name.clone(),
                    states: v.states.clone(),
                    terminal: v.terminal.iter().cloned().collect(),
                    cpd: Some(render_cpd(c, &dbn.invariant_vars, &dbn.slice_vars)),
                })
                .collect(),
            slice_variables: dbn
                .slice_vars
                .iter()
                .map(|v| VarFile {
                    name: v.name.clone(),
                    states: v.states.clone(),
                    terminal: v.terminal.iter().cloned().collect(),
                    cpd: None,
                })
                .collect(),
            initial: dbn
                .initial
                .iter()
                .map(|s| SliceFile {
                    cpds: s.cpds.iter().map(|c| render_cpd(c, &dbn.invariant_vars, &dbn.slice_vars)).collect(),
                })
                .collect(),
            homogeneous: SliceFile {
                cpds: dbn
                    .homogeneous
                    .cpds
                    .iter()
                    .map(|c| render_cpd(c, &dbn.invariant_vars, &dbn.slice_vars))
                    .collect(),
            },
        }
    }
}

pub fn parse_dbn(text: &str) -> Result<DbnSpec, IoError> {
    let file: DbnFile = serde_json::from_str(text)?;
    file.into_spec()
}

pub fn render_dbn(dbn: &DbnSpec) -> String {
    serde_json::to_string_pretty(&DbnFile::from_spec(dbn)).expect("dbn serializes")
}

pub fn load_dbn(path: &Path) -> Result<DbnSpec, IoError> {
    parse_dbn(&std::fs::read_to_string(path)?)
}

pub fn save_dbn(dbn: &DbnSpec, path: &Path) -> Result<(), IoError> {
    Ok(std::fs::write(path, render_dbn(dbn) + "\n")?)
}
