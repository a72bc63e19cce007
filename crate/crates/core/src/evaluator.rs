//! Scores candidate descriptions against two group samples.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{GroupSample, ImageRecord};
use crate::extractor::{render_template, PromptTemplates, StyleDescription};
use crate::gateway::{Gateway, GatewayError};
use crate::sha256_hex;
use crate::stats::{self, auroc, cosine, t_test, StatsError, TTestOptions, TTestResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Matcher(#[from] GatewayError),
    #[error("{failed} of {total} match calls failed, over the failure budget (first error: {first_error})")]
    FailureBudget {
        failed: usize,
        total: usize,
        first_error: String,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matcher {
    /// Cosine similarity of image and text embeddings.
    #[default]
    Embedding,
    /// Yes/no answer from an image question-answering model.
    Vqa,
    /// Caption the image, then ask a text-only yes/no question.
    CaptionQa,
}

impl Matcher {
    pub fn as_str(self) -> &'static str {
        match self {
            Matcher::Embedding => "embedding",
            Matcher::Vqa => "vqa",
            Matcher::CaptionQa => "caption-qa",
        }
    }

    /// Binary matchers produce scores in {0, 1}.
    pub fn is_binary(self) -> bool {
        !matches!(self, Matcher::Embedding)
    }
}

impl fmt::Display for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub image_id: String,
    /// SHA-256 of the normalized description text.
    pub description_hash: String,
    pub value: f64,
    pub matcher: Matcher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorConfig {
    pub matcher: Matcher,
    pub ttest: TTestOptions,
    /// Largest tolerated fraction of failed match calls per description.
    pub failure_budget: f64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig {
            matcher: Matcher::Embedding,
            ttest: TTestOptions::default(),
            failure_budget: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionEvaluation {
    pub description: StyleDescription,
    pub matcher: Matcher,
    /// Mean score over the A sample.
    pub score1: f64,
    /// Mean score over the B sample.
    pub score2: f64,
    pub diff: f64,
    /// Sum of A scores minus sum of B scores.
    pub s_y: f64,
    pub auroc: f64,
    pub ttest: TTestResult,
    pub retained: bool,
    /// Set for binary matchers, whose AUROC is dominated by ties.
    pub tie_warning: bool,
    /// Per-image scores ordered by image id.
    pub scores_a: Vec<(String, f64)>,
    pub scores_b: Vec<(String, f64)>,
    /// Image ids whose match call failed, excluded from both statistics.
    pub failed_images: Vec<String>,
}

impl DescriptionEvaluation {
    /// Aggregates per-image scores. Inputs are sorted by image id first, so
    /// the result does not depend on the order scores were produced in.
    pub fn from_scores(
        description: StyleDescription,
        matcher: Matcher,
        mut scores_a: Vec<(String, f64)>,
        mut scores_b: Vec<(String, f64)>,
        ttest: &TTestOptions,
    ) -> Result<DescriptionEvaluation, EvalError> {
        scores_a.sort_by(|x, y| x.0.cmp(&y.0));
        scores_b.sort_by(|x, y| x.0.cmp(&y.0));
        let a: Vec<f64> = scores_a.iter().map(|s| s.1).collect();
        let b: Vec<f64> = scores_b.iter().map(|s| s.1).collect();
        let test = t_test(&a, &b, ttest)?;
        let auroc = auroc(&a, &b)?;
        let score1 = stats::mean(&a);
        let score2 = stats::mean(&b);
        let diff = score1 - score2;
        let s_y = a.iter().sum::<f64>() - b.iter().sum::<f64>();
        Ok(DescriptionEvaluation {
            description,
            matcher,
            score1,
            score2,
            diff,
            s_y,
            auroc,
            retained: test.significant && diff > 0.0,
            ttest: test,
            tie_warning: matcher.is_binary(),
            scores_a,
            scores_b,
            failed_images: Vec::new(),
        })
    }

    pub fn values_a(&self) -> Vec<f64> {
        self.scores_a.iter().map(|s| s.1).collect()
    }

    pub fn values_b(&self) -> Vec<f64> {
        self.scores_b.iter().map(|s| s.1).collect()
    }
}

/// Keeps evaluations with `p < alpha` and a positive difference, ordered by
/// AUROC descending, then difference descending, then normalized text.
pub fn rank_and_filter(evals: &[DescriptionEvaluation], alpha: f64) -> Vec<DescriptionEvaluation> {
    let mut kept: Vec<DescriptionEvaluation> = evals
        .iter()
        .filter(|e| e.ttest.p_value < alpha && e.diff > 0.0)
        .cloned()
        .collect();
    kept.sort_by(compare_rank);
    kept
}

pub(crate) fn compare_rank(x: &DescriptionEvaluation, y: &DescriptionEvaluation) -> Ordering {
    y.auroc
        .total_cmp(&x.auroc)
        .then_with(|| y.diff.total_cmp(&x.diff))
        .then_with(|| x.description.normalized_text().cmp(&y.description.normalized_text()))
}

#[derive(Debug, Clone, Copy)]
pub struct Evaluator<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptTemplates,
    config: &'a EvaluatorConfig,
}

impl<'a> Evaluator<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptTemplates, config: &'a EvaluatorConfig) -> Self {
        Evaluator {
            gateway,
            prompts,
            config,
        }
    }

    pub fn match_embedding(
        &self,
        image: &ImageRecord,
        description: &StyleDescription,
    ) -> Result<MatchScore, GatewayError> {
        let e_x = self.gateway.embed_image(image)?;
        let e_y = self.gateway.embed_text(description.text())?;
        let value = cosine(&e_x, &e_y).map_err(|e| match e {
            StatsError::DimensionMismatch { left, right } => GatewayError::DimensionMismatch {
                expected: left,
                got: right,
            },
            other => GatewayError::BackendRejected(other.to_string()),
        })?;
        Ok(self.score(image, description, value, Matcher::Embedding))
    }

    pub fn match_vqa(&self, image: &ImageRecord, description: &StyleDescription) -> Result<MatchScore, GatewayError> {
        let question = render_template(&self.prompts.vqa_question, &[("description", description.text())]);
        let yes = self.gateway.vqa_match(image, description.text(), &question)?;
        Ok(self.score(image, description, if yes { 1.0 } else { 0.0 }, Matcher::Vqa))
    }

    pub fn match_caption_qa(
        &self,
        image: &ImageRecord,
        description: &StyleDescription,
    ) -> Result<MatchScore, GatewayError> {
        let caption = self.gateway.caption_image(image, &self.prompts.caption)?;
        let question = render_template(&self.prompts.qa_question, &[("description", description.text())]);
        let yes = self.gateway.caption_qa(&caption.text, description.text(), &question)?;
        Ok(self.score(image, description, if yes { 1.0 } else { 0.0 }, Matcher::CaptionQa))
    }

    pub fn match_image(&self, image: &ImageRecord, description: &StyleDescription) -> Result<MatchScore, GatewayError> {
        match self.config.matcher {
            Matcher::Embedding => self.match_embedding(image, description),
            Matcher::Vqa => self.match_vqa(image, description),
            Matcher::CaptionQa => self.match_caption_qa(image, description),
        }
    }

    fn score(&self, image: &ImageRecord, description: &StyleDescription, value: f64, matcher: Matcher) -> MatchScore {
        MatchScore {
            image_id: image.id.clone(),
            description_hash: sha256_hex(description.normalized_text()),
            value,
            matcher,
        }
    }

    /// Scores every image of both samples. Failed calls are dropped from
    /// both sides and listed; more than `failure_budget` of them is an error.
    pub fn evaluate(
        &self,
        description: &StyleDescription,
        sample_a: &GroupSample,
        sample_b: &GroupSample,
    ) -> Result<DescriptionEvaluation, EvalError> {
        if sample_a.is_empty() || sample_b.is_empty() {
            return Err(EvalError::Precondition("both samples must be non-empty".into()));
        }
        let jobs: Vec<(bool, &ImageRecord)> = sample_a
            .records
            .iter()
            .map(|r| (true, r))
            .chain(sample_b.records.iter().map(|r| (false, r)))
            .collect();
        let results = self
            .gateway
            .map_bounded(&jobs, |(_, r)| self.match_image(r, description));

        let mut scores_a = Vec::new();
        let mut scores_b = Vec::new();
        let mut failed = Vec::new();
        let mut first_error = None;
        for ((side_a, record), result) in jobs.iter().zip(results) {
            match result {
                Ok(score) if *side_a => scores_a.push((score.image_id, score.value)),
                Ok(score) => scores_b.push((score.image_id, score.value)),
                Err(e) => {
                    log::warn!("match failed for image {} and {:?}: {e}", record.id, description.text());
                    first_error.get_or_insert(e);
                    failed.push(record.id.clone());
                }
            }
        }
        if let Some(err) = first_error {
            let total = jobs.len();
            if failed.len() as f64 > self.config.failure_budget * total as f64 {
                return Err(EvalError::FailureBudget {
                    failed: failed.len(),
                    total,
                    first_error: err.to_string(),
                });
            }
        }
        let mut eval = DescriptionEvaluation::from_scores(
            description.clone(),
            self.config.matcher,
            scores_a,
            scores_b,
            &self.config.ttest,
        )?;
        failed.sort();
        eval.failed_images = failed;
        Ok(eval)
    }
}
