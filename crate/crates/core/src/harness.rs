//! Full experiments: every enumerated group pair is sampled, extracted and
//! evaluated, then the results are aggregated into an [`ExperimentReport`].
//!
//! Seeds: a pair's seed is the first 8 bytes (little endian) of
//! `SHA-256(master_seed as u64 LE || group_a || 0x00 || group_b)`. Each
//! side's sample seed is derived the same way from `(pair seed, group)`, so a
//! self pair `(A, A)` compares a sample with itself.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BackendKind, ConfigError, CountAttribution, RunConfig, SimilaritySource};
use crate::dataset::{enumerate_pairs, load_manifest, sample_group, DatasetError, DatasetManifest, GroupSample};
use crate::embedding::EmbeddingVec;
use crate::evaluator::{rank_and_filter, DescriptionEvaluation, EvalError, Evaluator};
use crate::extractor::{ExtractError, Extractor, StyleDescription};
use crate::gateway::{Backend, DiskCache, Gateway, GatewayError, GatewayOptions, HttpBackend, MockBackend};
use crate::sha256_bytes;
use crate::stats::{self, cosine, default_stopwords, linspace, summarize, DistributionSummary, StatsError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("cannot open cache directory {path}: {source}")]
    Cache {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("all {0} pairs failed")]
    AllPairsFailed(usize),
    #[error("report has no evaluations")]
    EmptyReport,
}

/// One description that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFailure {
    pub description: String,
    pub error: String,
    /// The failure came from exceeding the match-call failure budget.
    pub over_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub pair: (String, String),
    pub seed: u64,
    pub samples: (GroupSample, GroupSample),
    pub candidates: Vec<StyleDescription>,
    /// Retained evaluations in rank order.
    pub evaluations: Vec<DescriptionEvaluation>,
    /// Evaluations that were not retained, in candidate order.
    pub rejected: Vec<DescriptionEvaluation>,
    pub failures: Vec<EvaluationFailure>,
}

impl PairComparison {
    /// Every completed evaluation: retained ones first.
    pub fn all_evaluations(&self) -> impl Iterator<Item = &DescriptionEvaluation> {
        self.evaluations.iter().chain(&self.rejected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub pair: (String, String),
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub source: SimilaritySource,
    pub groups: Vec<String>,
    /// Row-major, `groups.len()` squared entries.
    pub values: Vec<Vec<f64>>,
    /// Groups left out for lack of retained descriptions (or embeddings).
    pub absent: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDistribution {
    pub pair_index: usize,
    pub pair: (String, String),
    pub description: String,
    pub side_a: DistributionSummary,
    pub side_b: DistributionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: RunConfig,
    pub backend_id: String,
    pub groups: Vec<String>,
    pub pairs: Vec<PairComparison>,
    pub failed_pairs: Vec<PairFailure>,
    /// Retained descriptions per group.
    pub significance_counts: BTreeMap<String, usize>,
    /// Significant descriptions per group, regardless of direction.
    pub significant_counts: BTreeMap<String, usize>,
    pub total_evaluations: usize,
    pub significance_rate: Option<f64>,
    pub similarity: SimilarityMatrix,
    pub distributions: Vec<PairDistribution>,
    pub word_frequencies: BTreeMap<String, Vec<(String, usize)>>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn evaluations(&self) -> impl Iterator<Item = &DescriptionEvaluation> {
        self.pairs.iter().flat_map(PairComparison::all_evaluations)
    }

    pub fn retained_total(&self) -> usize {
        self.pairs.iter().map(|p| p.evaluations.len()).sum()
    }

    /// Any pair failed or any description exceeded the failure budget.
    pub fn has_backend_failures(&self) -> bool {
        !self.failed_pairs.is_empty() || self.pairs.iter().any(|p| p.failures.iter().any(|f| f.over_budget))
    }
}

/// Share of completed evaluations whose t-test is significant.
pub fn significance_rate(report: &ExperimentReport) -> Result<f64, HarnessError> {
    let total = report.evaluations().count();
    if total == 0 {
        return Err(HarnessError::EmptyReport);
    }
    let significant = report.evaluations().filter(|e| e.ttest.significant).count();
    Ok(significant as f64 / total as f64)
}

/// Retained descriptions per group under `attribution`. Every group appears.
pub fn significance_counts(
    groups: &[String],
    pairs: &[PairComparison],
    attribution: CountAttribution,
) -> BTreeMap<String, usize> {
    count_by_group(groups, pairs, attribution, |p| p.evaluations.len())
}

fn count_by_group(
    groups: &[String],
    pairs: &[PairComparison],
    attribution: CountAttribution,
    count: impl Fn(&PairComparison) -> usize,
) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = groups.iter().map(|g| (g.clone(), 0)).collect();
    for p in pairs {
        let n = count(p);
        *counts.entry(p.pair.0.clone()).or_default() += n;
        if attribution == CountAttribution::Both && p.pair.1 != p.pair.0 {
            *counts.entry(p.pair.1.clone()).or_default() += n;
        }
    }
    counts
}

/// Seed of the pair `(a, b)`.
pub fn pair_seed(master_seed: u64, a: &str, b: &str) -> u64 {
    let mut bytes = master_seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(a.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(b.as_bytes());
    let digest = sha256_bytes(&bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Sample seed for `group` within a pair.
pub fn sample_seed(pair_seed: u64, group: &str) -> u64 {
    let mut bytes = pair_seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(group.as_bytes());
    let digest = sha256_bytes(&bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub struct Pipeline {
    config: RunConfig,
    manifest: DatasetManifest,
    gateway: Gateway,
}

impl Pipeline {
    /// Loads the manifest and builds the configured backend and cache.
    pub fn from_config(config: RunConfig) -> Result<Pipeline, HarnessError> {
        config.validate()?;
        let manifest = load_manifest(&config.manifest_path())?;
        let backend: Arc<dyn Backend> = match config.backend.kind {
            BackendKind::Mock => Arc::new(MockBackend::new(config.backend.mock.clone(), Some(&manifest))?),
            BackendKind::Http => {
                let url = config.backend.base_url.as_deref().unwrap_or_default();
                Arc::new(HttpBackend::new(url, config.backend.timeout())?)
            }
        };
        let disk = match config.cache_dir() {
            Some(dir) => Some(DiskCache::open(&dir).map_err(|source| HarnessError::Cache {
                path: dir.display().to_string(),
                source,
            })?),
            None => None,
        };
        let gateway = Gateway::new(backend, gateway_options(&config), disk)?;
        Ok(Pipeline::new(config, manifest, gateway))
    }

    pub fn new(config: RunConfig, manifest: DatasetManifest, gateway: Gateway) -> Pipeline {
        Pipeline {
            config,
            manifest,
            gateway,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn pairs(&self) -> Result<Vec<(String, String)>, HarnessError> {
        Ok(enumerate_pairs(&self.manifest, self.config.pair_mode)?)
    }

    /// Sample, extract, evaluate and rank one pair with `k` candidates.
    pub fn run_pair(&self, a: &str, b: &str, k: usize) -> Result<PairComparison, HarnessError> {
        let seed = pair_seed(self.config.master_seed, a, b);
        let sample_a = sample_group(&self.manifest, a, self.config.n_per_group, sample_seed(seed, a))?;
        let sample_b = sample_group(&self.manifest, b, self.config.n_per_group, sample_seed(seed, b))?;

        let extractor = Extractor::new(&self.gateway, &self.config.prompts, self.config.grid_per_group);
        let candidates = extractor.extract(self.config.strategy, &sample_a, &sample_b, k, seed)?;

        let eval_config = self.config.evaluator_config();
        let evaluator = Evaluator::new(&self.gateway, &self.config.prompts, &eval_config);
        let mut completed = Vec::new();
        let mut failures = Vec::new();
        for candidate in &candidates {
            match evaluator.evaluate(candidate, &sample_a, &sample_b) {
                Ok(e) => completed.push(e),
                Err(e) => {
                    log::warn!("{a} vs {b}: cannot evaluate {:?}: {e}", candidate.text());
                    failures.push(EvaluationFailure {
                        description: candidate.text().to_string(),
                        over_budget: matches!(e, EvalError::FailureBudget { .. }),
                        error: e.to_string(),
                    });
                }
            }
        }
        let evaluations = rank_and_filter(&completed, self.config.alpha);
        let rejected = completed.into_iter().filter(|e| !evaluations.contains(e)).collect();
        Ok(PairComparison {
            pair: (a.to_string(), b.to_string()),
            seed,
            samples: (sample_a, sample_b),
            candidates,
            evaluations,
            rejected,
            failures,
        })
    }

    pub fn run_all(&self) -> Result<ExperimentReport, HarnessError> {
        let pairs = self.pairs()?;
        let mut done = Vec::new();
        let mut failed = Vec::new();
        for (i, (a, b)) in pairs.iter().enumerate() {
            let k = self.config.candidates_for_pair(i, pairs.len());
            match self.run_pair(a, b, k) {
                Ok(p) => done.push(p),
                Err(e) => {
                    log::warn!("pair {a} vs {b} failed: {e}");
                    failed.push(PairFailure {
                        pair: (a.clone(), b.clone()),
                        error: e.to_string(),
                    });
                }
            }
        }
        if done.is_empty() {
            return Err(HarnessError::AllPairsFailed(pairs.len()));
        }
        self.assemble(done, failed)
    }

    /// Builds every aggregate over completed pairs.
    pub fn assemble(
        &self,
        pairs: Vec<PairComparison>,
        failed_pairs: Vec<PairFailure>,
    ) -> Result<ExperimentReport, HarnessError> {
        let groups = self.manifest.group_names();
        let attribution = self.config.count_attribution;
        let significance_counts = significance_counts(&groups, &pairs, attribution);
        let significant_counts = count_by_group(&groups, &pairs, attribution, |p| {
            p.all_evaluations().filter(|e| e.ttest.significant).count()
        });
        let similarity = self.similarity_matrix(&groups, &pairs)?;
        let distributions = self.distribution_summaries(&pairs)?;
        let word_frequencies = word_frequency_tables(&groups, &pairs);

        let mut notes = vec![
            format!("similarity source: {:?}", self.config.similarity_source).to_lowercase(),
            format!("significance counts attributed to: {:?}", attribution).to_lowercase(),
        ];
        if self.config.matcher.is_binary() {
            notes.push(format!(
                "matcher {} yields binary scores; AUROC values are dominated by ties",
                self.config.matcher
            ));
        }
        for g in &similarity.absent {
            notes.push(format!(
                "group {g} has no retained descriptions and is absent from the similarity matrix"
            ));
        }

        let mut report = ExperimentReport {
            config: self.config.clone(),
            backend_id: self.gateway.backend_id().to_string(),
            groups,
            pairs,
            failed_pairs,
            significance_counts,
            significant_counts,
            total_evaluations: 0,
            significance_rate: None,
            similarity,
            distributions,
            word_frequencies,
            notes,
        };
        report.total_evaluations = report.evaluations().count();
        report.significance_rate = significance_rate(&report).ok();
        Ok(report)
    }

    fn similarity_matrix(&self, groups: &[String], pairs: &[PairComparison]) -> Result<SimilarityMatrix, HarnessError> {
        let source = self.config.similarity_source;
        let mut vectors: BTreeMap<&str, EmbeddingVec> = BTreeMap::new();
        let mut absent = Vec::new();
        for g in groups {
            let embeddings = match source {
                SimilaritySource::Descriptions => {
                    let texts: BTreeSet<&str> = pairs
                        .iter()
                        .filter(|p| attributed(p, g, self.config.count_attribution))
                        .flat_map(|p| p.evaluations.iter().map(|e| e.description.text()))
                        .collect();
                    let texts: Vec<&str> = texts.into_iter().collect();
                    self.gateway
                        .map_bounded(&texts, |t| self.gateway.embed_text(t))
                        .into_iter()
                        .collect::<Result<Vec<_>, _>>()?
                }
                SimilaritySource::Images => {
                    let mut records: Vec<_> = pairs
                        .iter()
                        .flat_map(|p| [&p.samples.0, &p.samples.1])
                        .filter(|s| &s.group == g)
                        .flat_map(|s| s.records.iter())
                        .collect();
                    records.sort_by(|x, y| x.id.cmp(&y.id));
                    records.dedup_by(|x, y| x.id == y.id);
                    self.gateway
                        .map_bounded(&records, |r| self.gateway.embed_image(r))
                        .into_iter()
                        .collect::<Result<Vec<_>, _>>()?
                }
            };
            match EmbeddingVec::mean(&embeddings) {
                Some(m) => {
                    vectors.insert(g, m.normalized());
                }
                None => absent.push(g.clone()),
            }
        }
        let present: Vec<String> = vectors.keys().map(|g| g.to_string()).collect();
        let n = present.len();
        let mut values = vec![vec![0.0; n]; n];
        for i in 0..n {
            values[i][i] = 1.0;
            for j in i + 1..n {
                let c = cosine(&vectors[present[i].as_str()], &vectors[present[j].as_str()])?;
                values[i][j] = c;
                values[j][i] = c;
            }
        }
        Ok(SimilarityMatrix {
            source,
            groups: present,
            values,
            absent,
        })
    }

    /// Score distributions of each pair's top-ranked retained description.
    fn distribution_summaries(&self, pairs: &[PairComparison]) -> Result<Vec<PairDistribution>, HarnessError> {
        let mut out = Vec::new();
        for (i, p) in pairs.iter().enumerate() {
            let Some(top) = p.evaluations.first() else { continue };
            let (a, b) = (top.values_a(), top.values_b());
            let union: Vec<f64> = a.iter().chain(&b).copied().collect();
            let (lo, hi) = stats::min_max(&union);
            let grid = linspace(lo, hi, self.config.kde_points);
            out.push(PairDistribution {
                pair_index: i,
                pair: p.pair.clone(),
                description: top.description.text().to_string(),
                side_a: summarize(&a, self.config.histogram_bins, (lo, hi), &grid)?,
                side_b: summarize(&b, self.config.histogram_bins, (lo, hi), &grid)?,
            });
        }
        Ok(out)
    }
}

fn attributed(pair: &PairComparison, group: &str, attribution: CountAttribution) -> bool {
    pair.pair.0 == group || (attribution == CountAttribution::Both && pair.pair.1 == group)
}

fn word_frequency_tables(groups: &[String], pairs: &[PairComparison]) -> BTreeMap<String, Vec<(String, usize)>> {
    let stopwords = default_stopwords();
    groups
        .iter()
        .map(|g| {
            let texts: Vec<&str> = pairs
                .iter()
                .filter(|p| &p.pair.0 == g)
                .flat_map(|p| p.evaluations.iter().map(|e| e.description.text()))
                .collect();
            (g.clone(), stats::word_frequencies(&texts, &stopwords))
        })
        .collect()
}

pub fn gateway_options(config: &RunConfig) -> GatewayOptions {
    GatewayOptions {
        models: config.backend.models.clone(),
        embedding_dims: config.backend.embedding_dims,
        max_inflight: config.max_inflight,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_seeds_are_stable_and_distinct() {
        assert_eq!(pair_seed(1, "A", "B"), pair_seed(1, "A", "B"));
        assert_ne!(pair_seed(1, "A", "B"), pair_seed(1, "B", "A"));
        assert_ne!(pair_seed(1, "A", "B"), pair_seed(2, "A", "B"));
        // The separator keeps ("AB", "C") and ("A", "BC") apart.
        assert_ne!(pair_seed(0, "AB", "C"), pair_seed(0, "A", "BC"));
    }
}
