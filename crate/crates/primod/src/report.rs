//! Results-file schema and evaluation report generation.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{cluster, ClusterConfig, NameOccurrence, ThreatCluster};
use crate::llm::AnalysisResult;
use crate::metrics::{
    agreement_report, avg_coverage, build_presence_matrix, category_coverage, jaccard_per_df,
    pillar_recall, AgreementReport, CategoryProfile, MetricsError,
};

pub const RESULTS_SCHEMA: &str = "primod-results/1";

/// One run's output: a list of per-flow analysis results plus run metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub schema: String,
    pub run_id: String,
    pub model_name: String,
    #[serde(default)]
    pub created_at: String,
    #[serde(default)]
    pub index_fingerprint: String,
    pub results: Vec<AnalysisResult>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("malformed results file {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl ResultsFile {
    pub fn load(path: &Path) -> Result<ResultsFile, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|e| ReportError::Unreadable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let file: ResultsFile =
            serde_json::from_str(&text).map_err(|e| ReportError::Malformed {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        if file.schema != RESULTS_SCHEMA {
            return Err(ReportError::Malformed {
                path: path.display().to_string(),
                reason: format!("unsupported schema tag `{}`", file.schema),
            });
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), ReportError> {
        let json = serde_json::to_string_pretty(self).expect("results serialize");
        std::fs::write(path, json).map_err(|e| ReportError::Unreadable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn df_ids(&self) -> Vec<String> {
        self.results.iter().map(|r| r.df_id.clone()).collect()
    }

    pub fn profile(&self) -> CategoryProfile {
        CategoryProfile::from_results(self.model_name.clone(), &self.results)
    }

    pub fn occurrences(&self) -> Vec<NameOccurrence> {
        self.results
            .iter()
            .flat_map(|r| {
                r.identified_threats.iter().map(|t| NameOccurrence {
                    raw_name: t.name.clone(),
                    model: self.model_name.clone(),
                    df_id: r.df_id.clone(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerDfLayerA {
    pub df_id: String,
    pub candidate_coverage: f64,
    pub reference_coverage: f64,
    pub jaccard: f64,
}

/// Layer-A report: candidate model vs reference tool over the classical
/// LINDDUN category space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAReport {
    pub candidate_model: String,
    pub reference_model: String,
    pub pillar_recall: f64,
    pub candidate_avg_coverage: f64,
    pub reference_avg_coverage: f64,
    pub avg_jaccard: f64,
    pub per_df: Vec<PerDfLayerA>,
}

pub fn layer_a(candidate: &ResultsFile, reference: &ResultsFile) -> Result<LayerAReport, ReportError> {
    let cand_profile = candidate.profile();
    let ref_profile = reference.profile();
    let recall: f64 = pillar_recall(&cand_profile, &ref_profile)?;
    let mut per_df = Vec::new();
    let mut jaccard_sum = 0.0;
    for df in cand_profile.by_df.keys() {
        let j: f64 = jaccard_per_df(&cand_profile, &ref_profile, df)?;
        jaccard_sum += j;
        per_df.push(PerDfLayerA {
            df_id: df.clone(),
            candidate_coverage: category_coverage(&cand_profile, df)?,
            reference_coverage: category_coverage(&ref_profile, df)?,
            jaccard: j,
        });
    }
    let n = per_df.len().max(1) as f64;
    Ok(LayerAReport {
        candidate_model: candidate.model_name.clone(),
        reference_model: reference.model_name.clone(),
        pillar_recall: recall,
        candidate_avg_coverage: avg_coverage(&cand_profile),
        reference_avg_coverage: avg_coverage(&ref_profile),
        avg_jaccard: jaccard_sum / n,
        per_df,
    })
}

/// Layer-B output: the cluster partition plus the agreement report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBReport {
    pub tau: f64,
    pub clusters: Vec<ThreatCluster>,
    pub agreement: AgreementReport<f64>,
}

pub fn layer_b(
    a: &ResultsFile,
    b: &ResultsFile,
    tau: f64,
    system: &str,
) -> Result<LayerBReport, ReportError> {
    let config = ClusterConfig {
        tau,
        ..Default::default()
    };
    let mut occurrences = a.occurrences();
    occurrences.extend(b.occurrences());
    let clusters = cluster(&occurrences, &config);
    // The row universe spans every flow of the system; both runs analyzed
    // the same DFD, so take the union of their flow ids.
    let dfs: BTreeSet<String> = a.df_ids().into_iter().chain(b.df_ids()).collect();
    let dfs: Vec<String> = dfs.into_iter().collect();
    let matrix = build_presence_matrix(&clusters, &dfs, &a.model_name, &b.model_name);
    let agreement = agreement_report(system, &matrix)?;
    Ok(LayerBReport {
        tau,
        clusters,
        agreement,
    })
}

/// Cluster partition with per-model presence flags, for `report clusters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersReport {
    pub tau: f64,
    pub models: Vec<String>,
    pub clusters: Vec<ClusterSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: String,
    pub representative: String,
    pub members: Vec<NameOccurrence>,
    pub present_in_models: Vec<String>,
    pub quarantined: bool,
}

pub fn clusters_report(files: &[ResultsFile], tau: f64) -> ClustersReport {
    let config = ClusterConfig {
        tau,
        ..Default::default()
    };
    let occurrences: Vec<NameOccurrence> =
        files.iter().flat_map(|f| f.occurrences()).collect();
    let clusters = cluster(&occurrences, &config);
    let models: Vec<String> = files.iter().map(|f| f.model_name.clone()).collect();
    let summaries = clusters
        .into_iter()
        .map(|c| {
            let present: BTreeSet<String> = c.members.iter().map(|m| m.model.clone()).collect();
            ClusterSummary {
                cluster_id: c.cluster_id,
                representative: c.representative,
                present_in_models: present.into_iter().collect(),
                members: c.members,
                quarantined: c.quarantined,
            }
        })
        .collect();
    ClustersReport {
        tau,
        models,
        clusters: summaries,
    }
}

/// Combined two-layer summary in the shape of the published results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub layer_a: Vec<LayerAReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub layer_b: Vec<LayerBReport>,
}

pub fn render_summary_markdown(summary: &Summary) -> String {
    let mut out = String::new();
    if !summary.layer_a.is_empty() {
        out.push_str("## Layer A: Classical LINDDUN Threat Identification\n\n");
        out.push_str("| Model | Reference | Recall | Avg. Coverage | Avg. Jaccard |\n");
        out.push_str("|---|---|---|---|---|\n");
        for r in &summary.layer_a {
            out.push_str(&format!(
                "| {} | {} | {:.1}% | {:.1}% | {:.3} |\n",
                r.candidate_model,
                r.reference_model,
                100.0 * r.pillar_recall,
                100.0 * r.candidate_avg_coverage,
                r.avg_jaccard,
            ));
        }
        out.push('\n');
    }
    if !summary.layer_b.is_empty() {
        out.push_str("## Layer B: Cross-Model Agreement\n\n");
        out.push_str("| System | Model Pair | kappa | P_o | PABAK | R |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        for r in &summary.layer_b {
            let a = &r.agreement;
            out.push_str(&format!(
                "| {} | {} <-> {} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
                a.system, a.model_a, a.model_b, a.kappa, a.p_o, a.pabak, a.robustness,
            ));
        }
    }
    out
}
