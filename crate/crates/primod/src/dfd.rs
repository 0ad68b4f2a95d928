//! DFD parsing and validation.
//!
//! The target AI system is described by one JSON file with the element
//! inventory (external entities, processes, data stores), trust boundaries,
//! and the data flows that the pipeline analyzes one by one.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementKind {
    ExternalEntity,
    Process,
    DataStore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub id: String,
    #[serde(skip, default = "default_kind")]
    pub kind: ElementKind,
    pub name: String,
}

fn default_kind() -> ElementKind {
    ElementKind::Process
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundary {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub members: Vec<String>,
}

/// One directed data flow, the unit of analysis. Field names follow the
/// input JSON schema; `sensitive` is optional in input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFlow {
    pub id: String,
    pub source: String,
    pub destination: String,
    #[serde(default)]
    pub data_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitive: Option<bool>,
    #[serde(default)]
    pub sensitive_info: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub lifecycle_stage: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfdModel {
    #[serde(default)]
    pub external_entities: Vec<Element>,
    #[serde(default)]
    pub processes: Vec<Element>,
    #[serde(default)]
    pub data_stores: Vec<Element>,
    #[serde(default)]
    pub trust_boundaries: Vec<Boundary>,
    #[serde(default)]
    pub data_flows: Vec<DataFlow>,
}

/// One validation problem. `parse_dfd` reports every issue it finds, not
/// just the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DfdIssue {
    DuplicateId(String),
    DanglingReference { referrer: String, id: String },
    EmptyDescription { flow_id: String },
    EmptyElementId,
}

impl std::fmt::Display for DfdIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DfdIssue::DuplicateId(id) => write!(f, "duplicate id `{id}`"),
            DfdIssue::DanglingReference { referrer, id } => {
                write!(f, "`{referrer}` references undeclared element `{id}`")
            }
            DfdIssue::EmptyDescription { flow_id } => {
                write!(f, "data flow `{flow_id}` has an empty description")
            }
            DfdIssue::EmptyElementId => write!(f, "element with empty id"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DfdError {
    #[error("malformed DFD file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
    #[error("invalid DFD: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<DfdIssue>),
}

/// Parse and validate a DFD model file. Data-flow order is preserved.
pub fn parse_dfd(path: &Path) -> Result<DfdModel, DfdError> {
    let text = std::fs::read_to_string(path).map_err(|e| DfdError::MalformedFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut model: DfdModel =
        serde_json::from_str(&text).map_err(|e| DfdError::MalformedFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    assign_kinds(&mut model);
    validate(&model).map(|()| model)
}

fn assign_kinds(model: &mut DfdModel) {
    for e in &mut model.external_entities {
        e.kind = ElementKind::ExternalEntity;
    }
    for e in &mut model.processes {
        e.kind = ElementKind::Process;
    }
    for e in &mut model.data_stores {
        e.kind = ElementKind::DataStore;
    }
}

/// Check all model invariants, collecting every violation.
pub fn validate(model: &DfdModel) -> Result<(), DfdError> {
    let mut issues = Vec::new();
    let mut element_ids = BTreeSet::new();
    for e in model
        .external_entities
        .iter()
        .chain(&model.processes)
        .chain(&model.data_stores)
    {
        if e.id.is_empty() {
            issues.push(DfdIssue::EmptyElementId);
        } else if !element_ids.insert(e.id.clone()) {
            issues.push(DfdIssue::DuplicateId(e.id.clone()));
        }
    }
    for b in &model.trust_boundaries {
        for member in &b.members {
            if !element_ids.contains(member) {
                issues.push(DfdIssue::DanglingReference {
                    referrer: format!("trust boundary {}", b.id),
                    id: member.clone(),
                });
            }
        }
    }
    let mut flow_ids = BTreeSet::new();
    for flow in &model.data_flows {
        if !flow_ids.insert(flow.id.clone()) {
            issues.push(DfdIssue::DuplicateId(flow.id.clone()));
        }
        for endpoint in [&flow.source, &flow.destination] {
            if !element_ids.contains(endpoint) {
                issues.push(DfdIssue::DanglingReference {
                    referrer: format!("data flow {}", flow.id),
                    id: endpoint.clone(),
                });
            }
        }
        // The description doubles as the retrieval query, so it must exist.
        if flow.description.trim().is_empty() {
            issues.push(DfdIssue::EmptyDescription {
                flow_id: flow.id.clone(),
            });
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(DfdError::Invalid(issues))
    }
}

/// Resolve a flow's sensitivity: the explicit `sensitive` field wins when
/// present; otherwise the flow is sensitive iff `sensitive_info` is
/// non-empty after trimming.
pub fn derive_sensitive_flag(flow: &DataFlow) -> bool {
    match flow.sensitive {
        Some(explicit) => explicit,
        None => !flow.sensitive_info.trim().is_empty(),
    }
}
