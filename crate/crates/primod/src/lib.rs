//! Lifecycle-aware privacy threat identification for AI systems.
//!
//! The crate couples a retrieval-augmented analysis pipeline with evaluation
//! tooling. Two privacy knowledge bases (a hierarchical taxonomy and an AI
//! attack catalog) are chunked and embedded into an exact-search vector
//! index. For each data flow of a data-flow diagram, the top-k most similar
//! fragments are retrieved and stitched into a prompt for a chat-completion
//! model; the returned JSON is validated (and repaired when needed) into
//! structured threat records. Evaluation then scores those records: Layer A
//! compares category profiles against a reference (coverage, recall,
//! Jaccard), and Layer B measures cross-model agreement (Cohen's kappa,
//! PABAK, and a combined robustness score) on a cluster-presence matrix.
//!
//! Numeric routines in [`retrieval`] and [`metrics`] are generic over the
//! scalar type; concrete `f32`/`f64` aliases are re-exported at the crate
//! root for the common cases.

pub mod clustering;
pub mod dfd;
pub mod kb;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod report;
pub mod retrieval;

/// Single-precision vector index.
pub type VectorIndex32 = retrieval::VectorIndex<f32>;
/// Double-precision vector index (used by the pipeline and CLI).
pub type VectorIndex64 = retrieval::VectorIndex<f64>;
/// Single-precision embedding vector.
pub type EmbeddingVector32 = retrieval::EmbeddingVector<f32>;
/// Double-precision embedding vector.
pub type EmbeddingVector64 = retrieval::EmbeddingVector<f64>;
/// Double-precision agreement statistics.
pub type KappaStats64 = metrics::KappaStats<f64>;
/// Double-precision agreement report.
pub type AgreementReport64 = metrics::AgreementReport<f64>;
