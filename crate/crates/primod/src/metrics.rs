//! Evaluation metrics.
//!
//! Layer A compares category-level outputs against a reference tool over
//! the seven LINDDUN categories: per-flow category coverage, reference
//! recall, and per-flow Jaccard. Layer B measures cross-model agreement
//! over semantic threat clusters: observed agreement, Cohen's kappa,
//! PABAK, and a combined robustness coefficient.
//!
//! The presence-matrix universe is (every cluster found by either model) x
//! (every data flow of the system), so rows where both models are absent
//! exist and low prevalence is representable.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ThreatCluster;
use crate::kb::LinddunCategory;
use crate::llm::AnalysisResult;

/// Per-flow sets of LINDDUN categories with at least one threat, for one
/// model label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryProfile {
    pub model: String,
    pub by_df: BTreeMap<String, BTreeSet<LinddunCategory>>,
}

impl CategoryProfile {
    /// Build a profile from analysis results. Every result's df gets an
    /// entry, including flows with zero threats.
    pub fn from_results(model: impl Into<String>, results: &[AnalysisResult]) -> CategoryProfile {
        let mut by_df: BTreeMap<String, BTreeSet<LinddunCategory>> = BTreeMap::new();
        for r in results {
            let set = by_df.entry(r.df_id.clone()).or_default();
            for t in &r.identified_threats {
                set.insert(t.linddun_category);
            }
        }
        CategoryProfile {
            model: model.into(),
            by_df,
        }
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("unknown data flow `{0}`")]
    UnknownDf(String),
    #[error("profiles cover different data-flow sets")]
    DfSetMismatch,
    #[error("presence matrix is empty")]
    EmptyMatrix,
    #[error("value {0} out of range [0, 1]")]
    OutOfRange(f64),
}

/// Fraction of the seven LINDDUN categories with at least one threat for
/// the given flow.
pub fn category_coverage<F: Float>(
    profile: &CategoryProfile,
    df: &str,
) -> Result<F, MetricsError> {
    let set = profile
        .by_df
        .get(df)
        .ok_or_else(|| MetricsError::UnknownDf(df.to_string()))?;
    Ok(F::from(set.len()).unwrap() / F::from(7).unwrap())
}

/// Mean per-flow coverage over all flows in the profile.
pub fn avg_coverage<F: Float>(profile: &CategoryProfile) -> F {
    if profile.by_df.is_empty() {
        return F::zero();
    }
    let total: usize = profile.by_df.values().map(|s| s.len()).sum();
    F::from(total).unwrap() / (F::from(7).unwrap() * F::from(profile.by_df.len()).unwrap())
}

/// Fraction of the reference's (flow, category) pairs also present in the
/// candidate. Defined as 1.0 when the reference has no pairs.
pub fn pillar_recall<F: Float>(
    candidate: &CategoryProfile,
    reference: &CategoryProfile,
) -> Result<F, MetricsError> {
    if candidate.by_df.keys().ne(reference.by_df.keys()) {
        return Err(MetricsError::DfSetMismatch);
    }
    let mut reference_pairs = 0usize;
    let mut hits = 0usize;
    for (df, ref_set) in &reference.by_df {
        let cand_set = &candidate.by_df[df];
        reference_pairs += ref_set.len();
        hits += ref_set.iter().filter(|c| cand_set.contains(c)).count();
    }
    if reference_pairs == 0 {
        return Ok(F::one());
    }
    Ok(F::from(hits).unwrap() / F::from(reference_pairs).unwrap())
}

/// Jaccard similarity of the two models' category sets for one flow.
/// Defined as 1.0 when both sets are empty.
pub fn jaccard_per_df<F: Float>(
    a: &CategoryProfile,
    b: &CategoryProfile,
    df: &str,
) -> Result<F, MetricsError> {
    let sa = a
        .by_df
        .get(df)
        .ok_or_else(|| MetricsError::UnknownDf(df.to_string()))?;
    let sb = b
        .by_df
        .get(df)
        .ok_or_else(|| MetricsError::UnknownDf(df.to_string()))?;
    if sa.is_empty() && sb.is_empty() {
        return Ok(F::one());
    }
    let intersection = sa.intersection(sb).count();
    let union = sa.union(sb).count();
    Ok(F::from(intersection).unwrap() / F::from(union).unwrap())
}

/// One row of the presence matrix: did each model report at least one
/// member of this cluster for this flow?
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceRow {
    pub cluster_id: String,
    pub df_id: String,
    pub a: bool,
    pub b: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceMatrix {
    pub model_a: String,
    pub model_b: String,
    pub rows: Vec<PresenceRow>,
}

/// Build the full (cluster x flow) presence matrix for two model labels.
pub fn build_presence_matrix(
    clusters: &[ThreatCluster],
    dfs: &[String],
    model_a: &str,
    model_b: &str,
) -> PresenceMatrix {
    let mut rows = Vec::with_capacity(clusters.len() * dfs.len());
    for cluster in clusters {
        for df in dfs {
            let present = |model: &str| {
                cluster
                    .members
                    .iter()
                    .any(|m| m.model == model && m.df_id == *df)
            };
            rows.push(PresenceRow {
                cluster_id: cluster.cluster_id.clone(),
                df_id: df.clone(),
                a: present(model_a),
                b: present(model_b),
            });
        }
    }
    PresenceMatrix {
        model_a: model_a.to_string(),
        model_b: model_b.to_string(),
        rows,
    }
}

/// Fraction of rows on which the two models agree (joint presence or joint
/// absence).
pub fn observed_agreement<F: Float>(m: &PresenceMatrix) -> Result<F, MetricsError> {
    if m.rows.is_empty() {
        return Err(MetricsError::EmptyMatrix);
    }
    let equal = m.rows.iter().filter(|r| r.a == r.b).count();
    Ok(F::from(equal).unwrap() / F::from(m.rows.len()).unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaStats<F> {
    pub kappa: F,
    pub p_o: F,
    pub p_e: F,
}

/// Cohen's kappa over the binary presence matrix. The chance term uses the
/// two columns' marginal prevalences. Defined as 1.0 when P_o = P_e = 1.
pub fn cohens_kappa<F: Float>(m: &PresenceMatrix) -> Result<KappaStats<F>, MetricsError> {
    let p_o: F = observed_agreement(m)?;
    let n = F::from(m.rows.len()).unwrap();
    let p_a = F::from(m.rows.iter().filter(|r| r.a).count()).unwrap() / n;
    let p_b = F::from(m.rows.iter().filter(|r| r.b).count()).unwrap() / n;
    let p_e = p_a * p_b + (F::one() - p_a) * (F::one() - p_b);
    let kappa = if p_e == F::one() {
        if p_o == F::one() {
            F::one()
        } else {
            F::zero()
        }
    } else {
        (p_o - p_e) / (F::one() - p_e)
    };
    Ok(KappaStats { kappa, p_o, p_e })
}

/// Prevalence- and bias-adjusted kappa: 2*P_o - 1.
pub fn pabak<F: Float>(p_o: F) -> Result<F, MetricsError> {
    if p_o < F::zero() || p_o > F::one() {
        return Err(MetricsError::OutOfRange(p_o.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(F::from(2).unwrap() * p_o - F::one())
}

/// Combined robustness coefficient: the arithmetic mean of kappa, P_o and
/// PABAK.
pub fn robustness<F: Float>(kappa: F, p_o: F, pabak: F) -> F {
    (kappa + p_o + pabak) / F::from(3).unwrap()
}

/// Full Layer-B agreement report for one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport<F> {
    pub system: String,
    pub model_a: String,
    pub model_b: String,
    pub p_o: F,
    pub p_e: F,
    pub kappa: F,
    pub pabak: F,
    pub robustness: F,
    pub n_rows: usize,
}

/// Compute the full agreement report from a presence matrix.
pub fn agreement_report<F: Float>(
    system: &str,
    m: &PresenceMatrix,
) -> Result<AgreementReport<F>, MetricsError> {
    let stats = cohens_kappa::<F>(m)?;
    let pabak_value = pabak(stats.p_o)?;
    Ok(AgreementReport {
        system: system.to_string(),
        model_a: m.model_a.clone(),
        model_b: m.model_b.clone(),
        p_o: stats.p_o,
        p_e: stats.p_e,
        kappa: stats.kappa,
        pabak: pabak_value,
        robustness: robustness(stats.kappa, stats.p_o, pabak_value),
        n_rows: m.rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::NameOccurrence;

    fn profile(model: &str, sets: &[(&str, &[&str])]) -> CategoryProfile {
        CategoryProfile {
            model: model.to_string(),
            by_df: sets
                .iter()
                .map(|(df, cats)| {
                    (
                        df.to_string(),
                        cats.iter()
                            .map(|c| LinddunCategory::parse(c).unwrap())
                            .collect(),
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn coverage_of_three_categories() {
        let p = profile("PILLAR", &[("DF0", &["L", "I", "DD"])]);
        let cov: f64 = category_coverage(&p, "DF0").unwrap();
        assert!((cov - 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn coverage_bounds() {
        let p = profile("m", &[("DF0", &[]), ("DF1", &["L", "I", "NR", "DT", "DI", "U", "NC"])]);
        assert_eq!(category_coverage::<f64>(&p, "DF0").unwrap(), 0.0);
        assert_eq!(category_coverage::<f64>(&p, "DF1").unwrap(), 1.0);
        assert!(category_coverage::<f64>(&p, "DF9").is_err());
    }

    #[test]
    fn recall_hand_example() {
        // reference {DF1:{L,I}, DF2:{U}}, candidate {DF1:{L}, DF2:{U,NC}}
        let reference = profile("ref", &[("DF1", &["L", "I"]), ("DF2", &["U"])]);
        let candidate = profile("cand", &[("DF1", &["L"]), ("DF2", &["U", "NC"])]);
        let r: f64 = pillar_recall(&candidate, &reference).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn recall_identity_and_empty() {
        let p = profile("x", &[("DF1", &["L"])]);
        assert_eq!(pillar_recall::<f64>(&p, &p).unwrap(), 1.0);
        let empty_ref = profile("ref", &[("DF1", &[])]);
        let cand = profile("cand", &[("DF1", &["L"])]);
        assert_eq!(pillar_recall::<f64>(&cand, &empty_ref).unwrap(), 1.0);
        let empty_cand = profile("cand", &[("DF1", &[])]);
        let nonempty_ref = profile("ref", &[("DF1", &["L"])]);
        assert_eq!(pillar_recall::<f64>(&empty_cand, &nonempty_ref).unwrap(), 0.0);
    }

    // Face-auth DF0: model {L, I, DT, DI, U, NC} vs PILLAR {L, I, DI}.
    #[test]
    fn jaccard_df0_hand_example() {
        let a = profile("m", &[("DF0", &["L", "I", "D", "DD", "U", "Nc"])]);
        let b = profile("PILLAR", &[("DF0", &["L", "I", "DD"])]);
        let j: f64 = jaccard_per_df(&a, &b, "DF0").unwrap();
        assert!((j - 0.5).abs() < 1e-12);
    }

    fn matrix(pairs: &[(bool, bool)]) -> PresenceMatrix {
        PresenceMatrix {
            model_a: "A".into(),
            model_b: "B".into(),
            rows: pairs
                .iter()
                .enumerate()
                .map(|(i, (a, b))| PresenceRow {
                    cluster_id: format!("c{i}"),
                    df_id: "DF1".into(),
                    a: *a,
                    b: *b,
                })
                .collect(),
        }
    }

    #[test]
    fn observed_agreement_counting() {
        let m = matrix(&[(true, true); 7].iter().chain(&[(true, false); 3]).cloned().collect::<Vec<_>>());
        let p: f64 = observed_agreement(&m).unwrap();
        assert!((p - 0.7).abs() < 1e-12);
    }

    // 10 rows, A true on rows 1-4, B true on rows 1-3 and 5:
    // P_o = 0.8, p_A = p_B = 0.4, P_e = 0.52, kappa = 0.28/0.48.
    #[test]
    fn kappa_hand_matrix() {
        let mut pairs = vec![(false, false); 10];
        for row in &mut pairs[0..3] {
            *row = (true, true);
        }
        pairs[3] = (true, false);
        pairs[4] = (false, true);
        let stats: KappaStats<f64> = cohens_kappa(&matrix(&pairs)).unwrap();
        assert!((stats.p_o - 0.8).abs() < 1e-12);
        assert!((stats.p_e - 0.52).abs() < 1e-12);
        assert!((stats.kappa - 0.28 / 0.48).abs() < 1e-12);
    }

    #[test]
    fn kappa_identical_columns_is_one() {
        let stats: KappaStats<f64> =
            cohens_kappa(&matrix(&[(true, true), (false, false), (true, true)])).unwrap();
        assert_eq!(stats.kappa, 1.0);
    }

    #[test]
    fn pabak_values() {
        assert!((pabak(0.715f64).unwrap() - 0.43).abs() < 1e-12);
        assert_eq!(pabak(1.0f64).unwrap(), 1.0);
        assert_eq!(pabak(0.5f64).unwrap(), 0.0);
        assert!(pabak(1.5f64).is_err());
    }

    #[test]
    fn robustness_reproduces_published_values() {
        let r1: f64 = robustness(0.7455, 0.7818, 0.5782);
        assert!((r1 - 0.7018).abs() < 0.0005, "{r1}");
        let r2: f64 = robustness(0.69, 0.715, 0.43);
        assert!((r2 - 0.6117).abs() < 0.0005, "{r2}");
        assert_eq!(robustness::<f64>(1.0, 1.0, 1.0), 1.0);
    }

    #[test]
    fn presence_matrix_cardinality_and_cells() {
        let clusters: Vec<ThreatCluster> = (0..5)
            .map(|i| ThreatCluster {
                cluster_id: format!("c{i}"),
                members: if i == 2 {
                    vec![NameOccurrence {
                        raw_name: "x".into(),
                        model: "A".into(),
                        df_id: "DF3".into(),
                    }]
                } else {
                    Vec::new()
                },
                representative: format!("r{i}"),
                quarantined: false,
            })
            .collect();
        let dfs: Vec<String> = (0..8).map(|i| format!("DF{i}")).collect();
        let m = build_presence_matrix(&clusters, &dfs, "A", "B");
        assert_eq!(m.rows.len(), 40);
        let true_a: Vec<_> = m.rows.iter().filter(|r| r.a).collect();
        assert_eq!(true_a.len(), 1);
        assert_eq!(true_a[0].cluster_id, "c2");
        assert_eq!(true_a[0].df_id, "DF3");
        assert!(m.rows.iter().all(|r| !r.b));
    }
}
