//! Perception-aware detection of systematic topical bias in person-related
//! query suggestions.
//!
//! The pipeline crawls autocomplete lists, reduces suggestions to single
//! tokens, clusters their embeddings into topics, scores each (term, topic)
//! with rank-discounted DCG/nDCG over per-rank topic shares, and regresses
//! those scores on dummy-coded subject attributes.
//!
//! The numerical modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the working precision used by the pipeline.

pub mod cluster;
pub mod corpus;
pub mod embed;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use scalar::Scalar;

/// Working precision of the pipeline.
pub type Real = f64;

pub type EmbeddingStore = embed::EmbeddingStore<Real>;
pub type TokenVectors = embed::TokenVectors<Real>;
pub type ClusterModel = cluster::ClusterModel<Real>;
pub type KSelectionReport = cluster::KSelectionReport<Real>;
pub type TopicAffiliationProfile = metrics::TopicAffiliationProfile<Real>;
pub type MetricsTable = metrics::MetricsTable<Real>;
pub type DesignMatrix = stats::DesignMatrix<Real>;
pub type RegressionResult = stats::RegressionResult<Real>;
