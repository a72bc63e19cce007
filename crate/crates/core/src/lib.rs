//! Propose, score and rank natural-language descriptions of how one labeled
//! image group differs from another.
//!
//! The pipeline has two stages. An extractor asks a vision-language backend
//! for candidate difference descriptions (from captions, image grids or a
//! mean-embedding difference). An evaluator then scores every candidate
//! against every sampled image, ranks candidates by AUROC and drops those
//! that fail a two-sample t-test. The [`harness`] runs this over many group
//! pairs and the [`report`] module writes the results as tab-separated files.
//!
//! All backend traffic goes through [`gateway::Gateway`], which caches every
//! response on disk keyed by a digest of the canonical request. A fully
//! deterministic [`gateway::MockBackend`] makes the whole pipeline testable
//! offline.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod embedding;
pub mod evaluator;
pub mod extractor;
pub mod fixtures;
pub mod gateway;
pub mod harness;
pub mod report;
pub mod stats;
mod text;

pub use config::{ConfigError, RunConfig};
pub use dataset::{DatasetManifest, GroupSample, ImageRecord, PairMode};
pub use embedding::EmbeddingVec;
pub use evaluator::{DescriptionEvaluation, Evaluator, Matcher};
pub use extractor::{Extractor, Strategy, StyleDescription};
pub use gateway::{Gateway, MockBackend};
pub use harness::{ExperimentReport, PairComparison, Pipeline};

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

pub(crate) fn sha256_bytes(bytes: impl AsRef<[u8]>) -> [u8; 32] {
    Sha256::digest(bytes.as_ref()).into()
}
