//! Numerical statistics used by the evaluator and the report: cosine
//! similarity, AUROC, two-sample t-tests (with the regularized incomplete
//! beta function behind the p-values), distribution summaries and word
//! frequencies.
//!
//! Everything here is a pure function over slices.

mod auroc;
mod beta;
mod distribution;
mod ttest;
mod words;

pub use auroc::auroc;
pub use beta::{ln_gamma, regularized_incomplete_beta, student_t_sf};
pub(crate) use distribution::min_max;
pub use distribution::{
    five_number, histogram, histogram_in_range, kde, linspace, quantile, silverman_bandwidth, summarize,
    DistributionSummary, FiveNumber, HistogramBin,
};
pub use ttest::{t_test, welch_t_test, TTestOptions, TTestResult, Tail, VarianceModel};
pub use words::{default_stopwords, parse_stopwords, word_frequencies};

use thiserror::Error;

use crate::embedding::EmbeddingVec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("insufficient data: need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("zero norm vector")]
    ZeroNorm,
    #[error("zero bandwidth: all values are equal")]
    ZeroBandwidth,
    #[error("grid is not sorted")]
    UnsortedGrid,
    #[error("argument out of domain: {0}")]
    DomainError(String),
    #[error("continued fraction did not converge for a={a}, b={b}, x={x}")]
    NoConvergence { a: f64, b: f64, x: f64 },
}

/// Cosine similarity of two embeddings, clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVec, b: &EmbeddingVec) -> Result<f64, StatsError> {
    cosine_slices(a.values(), b.values())
}

pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(na > 0.0 && nb > 0.0) {
        return Err(StatsError::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub(crate) fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

pub(crate) fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}
