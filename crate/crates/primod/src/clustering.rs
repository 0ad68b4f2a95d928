//! Threat-name normalization and semantic clustering.
//!
//! Cross-model agreement needs the two models' threat names mapped onto
//! shared canonical clusters. Names are normalized (lowercase, punctuation
//! and stopword removal, suffix stemming), compared with token-set Jaccard
//! similarity, and merged by single-linkage connected components whenever
//! the similarity strictly exceeds the threshold tau.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Fixed English stopword list shipped in-repo, overridable via config.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "cannot", "could", "did", "do", "does", "doing", "down", "during", "each",
    "few", "for", "from", "further", "had", "has", "have", "having", "he", "her", "here",
    "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "may", "me", "might", "more", "most", "must", "my", "no", "nor", "not", "now", "of", "off",
    "on", "once", "only", "or", "other", "our", "ours", "out", "over", "own", "per", "same",
    "shall", "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs",
    "them", "then", "there", "these", "they", "this", "those", "through", "to", "too", "under",
    "until", "up", "upon", "us", "used", "uses", "using", "very", "via", "was", "we", "were",
    "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "within",
    "without", "would", "you", "your", "yours",
];

/// Normalization and clustering parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Merge threshold: two names join a cluster when Jaccard > tau.
    pub tau: f64,
    /// Stopword override; `None` uses the shipped list.
    #[serde(default)]
    pub stopwords: Option<Vec<String>>,
    /// Version tag of the stemming rule set.
    pub stemmer_rules_version: String,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            tau: 0.20,
            stopwords: None,
            stemmer_rules_version: "suffix-v1".to_string(),
        }
    }
}

impl ClusterConfig {
    fn is_stopword(&self, token: &str) -> bool {
        match &self.stopwords {
            Some(list) => list.iter().any(|w| w == token),
            None => DEFAULT_STOPWORDS.binary_search(&token).is_ok(),
        }
    }
}

/// Normalized token set for one raw threat name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSet {
    pub tokens: BTreeSet<String>,
    pub origin: String,
}

#[derive(Debug, Error)]
#[error("name `{0}` reduced to zero tokens after normalization")]
pub struct EmptyAfterNormalization(pub String);

/// Suffix-stripping stemmer, rule set `suffix-v1`:
/// try `-ing`, `-ed`, `-ion`, `-es`, `-s`, `-al` in that order, strip the
/// first suffix that matches and leaves a stem of at least 3 characters,
/// applied once.
pub fn stem(token: &str) -> String {
    const SUFFIXES: [&str; 6] = ["ing", "ed", "ion", "es", "s", "al"];
    for suffix in SUFFIXES {
        if let Some(stemmed) = token.strip_suffix(suffix) {
            if stemmed.chars().count() >= 3 {
                return stemmed.to_string();
            }
        }
    }
    token.to_string()
}

/// Deterministic normalization pipeline: lowercase, punctuation to spaces,
/// whitespace tokenization, stopword removal, stemming, deduplication.
pub fn normalize_name(name: &str, config: &ClusterConfig) -> Result<TokenSet, EmptyAfterNormalization> {
    let lowered = name.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let tokens: BTreeSet<String> = cleaned
        .split_whitespace()
        .filter(|t| !config.is_stopword(t))
        .map(stem)
        .collect();
    if tokens.is_empty() {
        return Err(EmptyAfterNormalization(name.to_string()));
    }
    Ok(TokenSet {
        tokens,
        origin: name.to_string(),
    })
}

/// |a ∩ b| / |a ∪ b|. Two empty sets are defined as identical (1.0);
/// exactly one empty set gives 0.0.
pub fn token_jaccard(a: &TokenSet, b: &TokenSet) -> f64 {
    if a.tokens.is_empty() && b.tokens.is_empty() {
        return 1.0;
    }
    if a.tokens.is_empty() || b.tokens.is_empty() {
        return 0.0;
    }
    let intersection = a.tokens.intersection(&b.tokens).count();
    let union = a.tokens.union(&b.tokens).count();
    intersection as f64 / union as f64
}

/// One occurrence of a threat name in some model's output for some flow.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NameOccurrence {
    pub raw_name: String,
    pub model: String,
    pub df_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatCluster {
    pub cluster_id: String,
    pub members: Vec<NameOccurrence>,
    /// Lexicographically smallest member name.
    pub representative: String,
    /// True when the members failed normalization and were quarantined
    /// into a singleton cluster.
    #[serde(default)]
    pub quarantined: bool,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb.max(ra)] = rb.min(ra);
        }
    }
}

/// Single-linkage clustering of threat-name occurrences. Names whose
/// pairwise Jaccard strictly exceeds `config.tau` end up in one cluster
/// (transitively). Output is a partition: disjoint and exhaustive over the
/// input occurrences, sorted by representative, with deterministic ids.
pub fn cluster(occurrences: &[NameOccurrence], config: &ClusterConfig) -> Vec<ThreatCluster> {
    // Similarity depends only on the raw name, so work over unique names
    // (sorted, for order independence) and fan occurrences back out.
    let mut by_name: BTreeMap<String, Vec<NameOccurrence>> = BTreeMap::new();
    for occ in occurrences {
        by_name.entry(occ.raw_name.clone()).or_default().push(occ.clone());
    }
    let names: Vec<&String> = by_name.keys().collect();
    let token_sets: Vec<Option<TokenSet>> = names
        .iter()
        .map(|n| normalize_name(n, config).ok())
        .collect();

    let mut uf = UnionFind::new(names.len());
    for i in 0..names.len() {
        let Some(a) = &token_sets[i] else { continue };
        for j in i + 1..names.len() {
            let Some(b) = &token_sets[j] else { continue };
            if token_jaccard(a, b) > config.tau {
                uf.union(i, j);
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..names.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }

    let mut clusters: Vec<ThreatCluster> = groups
        .into_values()
        .map(|name_indices| {
            let quarantined =
                name_indices.len() == 1 && token_sets[name_indices[0]].is_none();
            let member_names: Vec<&str> =
                name_indices.iter().map(|&i| names[i].as_str()).collect();
            let mut members: Vec<NameOccurrence> = name_indices
                .iter()
                .flat_map(|&i| by_name[names[i]].iter().cloned())
                .collect();
            members.sort();
            let representative = member_names
                .iter()
                .min()
                .map(|s| s.to_string())
                .unwrap_or_default();
            ThreatCluster {
                cluster_id: cluster_id(&member_names),
                members,
                representative,
                quarantined,
            }
        })
        .collect();
    clusters.sort_by(|a, b| a.representative.cmp(&b.representative));
    clusters
}

/// Deterministic id from the sorted member names.
fn cluster_id(member_names: &[&str]) -> String {
    let mut sorted: Vec<&str> = member_names.to_vec();
    sorted.sort_unstable();
    let mut hasher = Sha256::new();
    for name in sorted {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("c-{hex}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn occ(raw: &str, model: &str, df: &str) -> NameOccurrence {
        NameOccurrence {
            raw_name: raw.to_string(),
            model: model.to_string(),
            df_id: df.to_string(),
        }
    }

    #[test]
    fn stopword_list_is_sorted_for_binary_search() {
        let mut sorted = DEFAULT_STOPWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, DEFAULT_STOPWORDS);
    }

    #[test]
    fn normalizes_unencrypted_data_transfer() {
        let config = ClusterConfig::default();
        let ts = normalize_name("Unencrypted Data Transfer", &config).unwrap();
        let expected: BTreeSet<String> =
            ["unencrypt", "data", "transfer"].iter().map(|s| s.to_string()).collect();
        assert_eq!(ts.tokens, expected);
    }

    #[test]
    fn all_stopwords_is_an_error() {
        let config = ClusterConfig::default();
        assert!(normalize_name("THE the The", &config).is_err());
    }

    #[test]
    fn normalization_is_idempotent() {
        let config = ClusterConfig::default();
        let ts = normalize_name("Membership Inference Attacks", &config).unwrap();
        let rendered = ts.tokens.iter().cloned().collect::<Vec<_>>().join(" ");
        let again = normalize_name(&rendered, &config).unwrap();
        assert_eq!(ts.tokens, again.tokens);
    }

    // The two misinformation names: token sets intersect in 3 of 6.
    #[test]
    fn misinformation_pair_jaccard_is_half() {
        let config = ClusterConfig::default();
        let a = normalize_name("AI-Generated Misinformation Using Location Data", &config).unwrap();
        let b = normalize_name("AI-Fabricated Location Misinformation", &config).unwrap();
        let expect_a: BTreeSet<String> = ["ai", "generat", "misinformat", "locat", "data"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let expect_b: BTreeSet<String> = ["ai", "fabricat", "locat", "misinformat"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(a.tokens, expect_a);
        assert_eq!(b.tokens, expect_b);
        assert_eq!(token_jaccard(&a, &b), 0.5);
    }

    #[test]
    fn misinformation_pair_lands_in_one_cluster() {
        let config = ClusterConfig::default();
        let occurrences = vec![
            occ("AI-Generated Misinformation Using Location Data", "gpt-oss", "DF3"),
            occ("AI-Fabricated Location Misinformation", "llama", "DF3"),
        ];
        let clusters = cluster(&occurrences, &config);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].members.len(), 2);
        assert_eq!(
            clusters[0].representative,
            "AI-Fabricated Location Misinformation"
        );
    }

    #[test]
    fn jaccard_edge_conventions() {
        let config = ClusterConfig::default();
        let a = normalize_name("data leak", &config).unwrap();
        assert_eq!(token_jaccard(&a, &a), 1.0);
        let b = normalize_name("model theft", &config).unwrap();
        assert_eq!(token_jaccard(&a, &b), 0.0);
        let empty = TokenSet {
            tokens: BTreeSet::new(),
            origin: String::new(),
        };
        assert_eq!(token_jaccard(&empty, &empty), 1.0);
        assert_eq!(token_jaccard(&a, &empty), 0.0);
    }

    #[test]
    fn single_name_is_singleton_cluster() {
        let clusters = cluster(&[occ("Model Inversion", "m", "DF1")], &ClusterConfig::default());
        assert_eq!(clusters.len(), 1);
        assert!(!clusters[0].quarantined);
    }

    #[test]
    fn unnormalizable_names_are_quarantined_singletons() {
        let clusters = cluster(
            &[occ("the", "m", "DF1"), occ("Model Inversion", "m", "DF1")],
            &ClusterConfig::default(),
        );
        assert_eq!(clusters.len(), 2);
        let quarantined: Vec<_> = clusters.iter().filter(|c| c.quarantined).collect();
        assert_eq!(quarantined.len(), 1);
        assert_eq!(quarantined[0].representative, "the");
    }

    #[test]
    fn permutation_invariance() {
        let config = ClusterConfig::default();
        let mut occurrences = vec![
            occ("Model Inversion Attack", "a", "DF1"),
            occ("Inversion Attack on Models", "b", "DF1"),
            occ("Data Poisoning", "a", "DF2"),
            occ("Poisoning of Training Data", "b", "DF2"),
            occ("Unrelated Threat", "a", "DF3"),
        ];
        let forward = cluster(&occurrences, &config);
        occurrences.reverse();
        let backward = cluster(&occurrences, &config);
        assert_eq!(forward, backward);
    }

    #[test]
    fn raising_tau_never_merges() {
        let config_low = ClusterConfig { tau: 0.1, ..Default::default() };
        let config_high = ClusterConfig { tau: 0.6, ..Default::default() };
        let occurrences = vec![
            occ("Model Inversion Attack", "a", "DF1"),
            occ("Model Inversion", "b", "DF1"),
            occ("Membership Inference Attack", "a", "DF1"),
        ];
        let low = cluster(&occurrences, &config_low);
        let high = cluster(&occurrences, &config_high);
        assert!(high.len() >= low.len());
    }
}
