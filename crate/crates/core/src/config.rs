//! Run configuration, read from TOML.
//!
//! ```toml
//! manifest = "manifest.tsv"      # relative to the workspace
//! workspace = "."                # relative to the config file's directory
//! strategy = "text-based"        # text-based | image-grid | embedding-diff
//! matcher = "embedding"          # embedding | vqa | caption-qa
//! n_per_group = 20
//! k_candidates = 5
//! # total_candidates = 270       # spread over all pairs instead of k per pair
//! pair_mode = "ordered-no-self"  # ordered-no-self | unordered | ordered-with-self
//! alpha = 0.05
//! master_seed = 0
//!
//! [backend]
//! kind = "mock"                  # mock | http
//! cache_dir = "cache"
//!
//! [backend.mock]
//! dims = 16
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::PairMode;
use crate::evaluator::{EvaluatorConfig, Matcher};
use crate::extractor::{PromptTemplates, Strategy};
use crate::gateway::{MockConfig, ModelIds};
use crate::stats::{TTestOptions, Tail, VarianceModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilaritySource {
    /// Mean embedding of each group's retained description texts.
    #[default]
    Descriptions,
    /// Mean embedding of each group's sampled images.
    Images,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountAttribution {
    /// A retained description counts for the pair's first group.
    #[default]
    GroupA,
    /// A retained description counts for both groups of the pair.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    /// Response cache directory, relative to the workspace. Absent disables
    /// the on-disk cache.
    pub cache_dir: Option<String>,
    pub timeout_secs: u64,
    pub embedding_dims: Option<usize>,
    pub models: ModelIds,
    pub mock: MockConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            base_url: None,
            cache_dir: Some("cache".into()),
            timeout_secs: 120,
            embedding_dims: None,
            models: ModelIds::default(),
            mock: MockConfig::default(),
        }
    }
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub workspace: Option<String>,
    pub manifest: String,
    pub strategy: Strategy,
    pub matcher: Matcher,
    pub n_per_group: usize,
    pub k_candidates: usize,
    /// When set, overrides `k_candidates` by spreading this many candidate
    /// requests over all pairs (the first `total % pairs` pairs get one more).
    pub total_candidates: Option<usize>,
    pub pair_mode: PairMode,
    pub alpha: f64,
    pub tail: Tail,
    pub variance: VarianceModel,
    pub master_seed: u64,
    pub max_inflight: usize,
    pub failure_budget: f64,
    pub grid_per_group: usize,
    pub similarity_source: SimilaritySource,
    pub count_attribution: CountAttribution,
    pub histogram_bins: usize,
    pub kde_points: usize,
    pub backend: BackendConfig,
    pub prompts: PromptTemplates,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            workspace: None,
            manifest: "manifest.tsv".into(),
            strategy: Strategy::TextBased,
            matcher: Matcher::Embedding,
            n_per_group: 20,
            k_candidates: 5,
            total_candidates: None,
            pair_mode: PairMode::OrderedNoSelf,
            alpha: 0.05,
            tail: Tail::TwoSided,
            variance: VarianceModel::Welch,
            master_seed: 0,
            max_inflight: 8,
            failure_budget: 0.1,
            grid_per_group: 4,
            similarity_source: SimilaritySource::Descriptions,
            count_attribution: CountAttribution::GroupA,
            histogram_bins: 20,
            kde_points: 200,
            backend: BackendConfig::default(),
            prompts: PromptTemplates::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        RunConfig::from_toml_str(&text, base)
    }

    /// Parses and validates; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<RunConfig, ConfigError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = dir.into();
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.n_per_group < 2 {
            return invalid("n_per_group must be at least 2 for the t-test".into());
        }
        if self.k_candidates == 0 {
            return invalid("k_candidates must be at least 1".into());
        }
        if self.total_candidates == Some(0) {
            return invalid("total_candidates must be at least 1".into());
        }
        if self.max_inflight == 0 {
            return invalid("max_inflight must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.failure_budget) {
            return invalid("failure_budget must lie in [0, 1]".into());
        }
        if self.grid_per_group == 0 {
            return invalid("grid_per_group must be at least 1".into());
        }
        if self.histogram_bins == 0 {
            return invalid("histogram_bins must be at least 1".into());
        }
        if self.kde_points < 2 {
            return invalid("kde_points must be at least 2".into());
        }
        if self.backend.kind == BackendKind::Http && self.backend.base_url.is_none() {
            return invalid("backend.base_url is required for the http backend".into());
        }
        Ok(())
    }

    pub fn workspace_dir(&self) -> PathBuf {
        self.base_dir.join(self.workspace.as_deref().unwrap_or("."))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.workspace_dir().join(&self.manifest)
    }

    pub fn cache_dir(&self) -> Option<PathBuf> {
        self.backend.cache_dir.as_ref().map(|d| self.workspace_dir().join(d))
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.workspace_dir().join("runs")
    }

    pub fn ttest_options(&self) -> TTestOptions {
        TTestOptions {
            alpha: self.alpha,
            variance: self.variance,
            tail: self.tail,
        }
    }

    pub fn evaluator_config(&self) -> EvaluatorConfig {
        EvaluatorConfig {
            matcher: self.matcher,
            ttest: self.ttest_options(),
            failure_budget: self.failure_budget,
        }
    }

    /// Candidate count for pair `index` out of `pairs`.
    pub fn candidates_for_pair(&self, index: usize, pairs: usize) -> usize {
        match self.total_candidates {
            Some(total) if pairs > 0 => total / pairs + usize::from(index < total % pairs),
            _ => self.k_candidates,
        }
    }
}
