//! Candidate difference descriptions for a pair of group samples.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GroupSample;
use crate::embedding::EmbeddingVec;
use crate::gateway::{Gateway, GatewayError, GridLayout, ImageRef, ProposerPayload};
use crate::text::{description_key, normalize_whitespace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("no candidate descriptions survived parsing")]
    EmptyProposal,
    #[error("mean embedding difference is degenerate (norm below 1e-12)")]
    DegenerateDiff,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Caption every image, then let the proposer compare the two caption sets.
    #[default]
    TextBased,
    /// Show the proposer a grid of the first images of each sample.
    ImageGrid,
    /// Hand the proposer the normalized difference of mean image embeddings.
    EmbeddingDiff,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::TextBased => "text-based",
            Strategy::ImageGrid => "image-grid",
            Strategy::EmbeddingDiff => "embedding-diff",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleDescription {
    text: String,
    pub strategy: Strategy,
    pub pair: (String, String),
    pub run_seed: u64,
}

impl StyleDescription {
    /// Collapses the text onto one line. Returns `None` for blank text.
    pub fn new(text: &str, strategy: Strategy, pair: (String, String), run_seed: u64) -> Option<StyleDescription> {
        let text = normalize_whitespace(text);
        if text.is_empty() {
            return None;
        }
        Some(StyleDescription {
            text,
            strategy,
            pair,
            run_seed,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Lowercased, whitespace-collapsed text without terminal punctuation.
    pub fn normalized_text(&self) -> String {
        description_key(&self.text)
    }
}

/// Prompt wording for every backend call. Placeholders: `{captions_a}`,
/// `{captions_b}`, `{k}`, `{grid_note}` in proposer prompts and
/// `{description}` in the yes/no questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    pub caption: String,
    pub text_based: String,
    pub image_grid: String,
    pub embedding_diff: String,
    pub vqa_question: String,
    pub qa_question: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            caption: "Describe the architectural style of this building in one detailed paragraph.".into(),
            text_based: "Group A image descriptions:\n{captions_a}\n\nGroup B image descriptions:\n{captions_b}\n\n\
                         List {k} concise stylistic properties that are true of group A but not of group B, \
                         one per line."
                .into(),
            image_grid: "{grid_note}\n\nList {k} concise stylistic properties that are true of the first grid \
                         but not of the second, one per line."
                .into(),
            embedding_diff: "The attached vector is the difference between the mean style embeddings of group A \
                             and group B. List {k} concise stylistic properties it most likely encodes, one per line."
                .into(),
            vqa_question: "Does this image match the description: \"{description}\"? Answer yes or no.".into(),
            qa_question: "Given the image caption, does the image match the description: \"{description}\"? \
                          Answer yes or no."
                .into(),
        }
    }
}

/// Substitutes `{name}` placeholders; unknown placeholders are left as is.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Drops later entries whose normalized text repeats an earlier one.
pub fn dedup_candidates(candidates: Vec<StyleDescription>) -> Vec<StyleDescription> {
    let mut seen = HashSet::new();
    candidates
        .into_iter()
        .filter(|d| seen.insert(d.normalized_text()))
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Extractor<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptTemplates,
    grid_per_group: usize,
}

impl<'a> Extractor<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptTemplates, grid_per_group: usize) -> Self {
        Extractor {
            gateway,
            prompts,
            grid_per_group,
        }
    }

    pub fn extract(
        &self,
        strategy: Strategy,
        sample_a: &GroupSample,
        sample_b: &GroupSample,
        k: usize,
        run_seed: u64,
    ) -> Result<Vec<StyleDescription>, ExtractError> {
        match strategy {
            Strategy::TextBased => self.text_based(sample_a, sample_b, k, run_seed),
            Strategy::ImageGrid => self.image_grid(sample_a, sample_b, k, run_seed),
            Strategy::EmbeddingDiff => self.embedding_diff(sample_a, sample_b, k, run_seed),
        }
    }

    pub fn text_based(
        &self,
        sample_a: &GroupSample,
        sample_b: &GroupSample,
        k: usize,
        run_seed: u64,
    ) -> Result<Vec<StyleDescription>, ExtractError> {
        check_inputs(sample_a, sample_b, k)?;
        let captions_a = self.captions(sample_a)?;
        let captions_b = self.captions(sample_b)?;
        let prompt = render_template(
            &self.prompts.text_based,
            &[
                ("captions_a", &numbered(&captions_a)),
                ("captions_b", &numbered(&captions_b)),
                ("k", &k.to_string()),
                ("grid_note", ""),
            ],
        );
        let payload = ProposerPayload::CaptionsPair { captions_a, captions_b };
        self.propose(&prompt, k, &payload, Strategy::TextBased, sample_a, sample_b, run_seed)
    }

    /// Uses the first `grid_per_group` records of each sample, laid out
    /// row-major in a near-square grid.
    pub fn image_grid(
        &self,
        sample_a: &GroupSample,
        sample_b: &GroupSample,
        k: usize,
        run_seed: u64,
    ) -> Result<Vec<StyleDescription>, ExtractError> {
        check_inputs(sample_a, sample_b, k)?;
        if self.grid_per_group == 0 {
            return Err(ExtractError::Precondition("grid size must be at least 1".into()));
        }
        let take = |s: &GroupSample| -> Vec<ImageRef> {
            s.records.iter().take(self.grid_per_group).map(ImageRef::from).collect()
        };
        let (images_a, images_b) = (take(sample_a), take(sample_b));
        let (grid_a, grid_b) = (
            GridLayout::for_count(images_a.len()),
            GridLayout::for_count(images_b.len()),
        );
        let grid_note = format!(
            "The first grid ({}x{}) shows group A, the second grid ({}x{}) shows group B.",
            grid_a.rows, grid_a.cols, grid_b.rows, grid_b.cols
        );
        let prompt = render_template(
            &self.prompts.image_grid,
            &[
                ("grid_note", &grid_note),
                ("k", &k.to_string()),
                ("captions_a", ""),
                ("captions_b", ""),
            ],
        );
        let payload = ProposerPayload::GridImages {
            grid_a,
            grid_b,
            images_a,
            images_b,
        };
        self.propose(&prompt, k, &payload, Strategy::ImageGrid, sample_a, sample_b, run_seed)
    }

    pub fn embedding_diff(
        &self,
        sample_a: &GroupSample,
        sample_b: &GroupSample,
        k: usize,
        run_seed: u64,
    ) -> Result<Vec<StyleDescription>, ExtractError> {
        check_inputs(sample_a, sample_b, k)?;
        let diff = self.mean_difference(sample_a, sample_b)?;
        let prompt = render_template(
            &self.prompts.embedding_diff,
            &[
                ("k", &k.to_string()),
                ("captions_a", ""),
                ("captions_b", ""),
                ("grid_note", ""),
            ],
        );
        let payload = ProposerPayload::DiffEmbedding { embedding: diff };
        self.propose(
            &prompt,
            k,
            &payload,
            Strategy::EmbeddingDiff,
            sample_a,
            sample_b,
            run_seed,
        )
    }

    /// Unit-norm `mean(A) - mean(B)` where each mean is itself re-normalized.
    pub fn mean_difference(
        &self,
        sample_a: &GroupSample,
        sample_b: &GroupSample,
    ) -> Result<EmbeddingVec, ExtractError> {
        let mean_a = self.mean_embedding(sample_a)?;
        let mean_b = self.mean_embedding(sample_b)?;
        if mean_a.dims() != mean_b.dims() {
            return Err(GatewayError::DimensionMismatch {
                expected: mean_a.dims(),
                got: mean_b.dims(),
            }
            .into());
        }
        let values: Vec<f64> = mean_a
            .values()
            .iter()
            .zip(mean_b.values())
            .map(|(a, b)| a - b)
            .collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= 1e-12) {
            return Err(ExtractError::DegenerateDiff);
        }
        EmbeddingVec::new(mean_a.model_id(), values.iter().map(|v| v / norm).collect())
            .map_err(|_| ExtractError::DegenerateDiff)
    }

    fn mean_embedding(&self, sample: &GroupSample) -> Result<EmbeddingVec, ExtractError> {
        let embeddings = self
            .gateway
            .map_bounded(&sample.records, |r| self.gateway.embed_image(r))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        EmbeddingVec::mean(&embeddings)
            .map(|m| m.normalized())
            .ok_or(ExtractError::DegenerateDiff)
    }

    fn captions(&self, sample: &GroupSample) -> Result<Vec<String>, ExtractError> {
        Ok(self
            .gateway
            .map_bounded(&sample.records, |r| {
                self.gateway.caption_image(r, &self.prompts.caption)
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|c| c.text)
            .collect())
    }

    #[allow(clippy::too_many_arguments)]
    fn propose(
        &self,
        prompt: &str,
        k: usize,
        payload: &ProposerPayload,
        strategy: Strategy,
        sample_a: &GroupSample,
        sample_b: &GroupSample,
        run_seed: u64,
    ) -> Result<Vec<StyleDescription>, ExtractError> {
        let texts = match self.gateway.propose_differences(prompt, k, payload) {
            Err(GatewayError::EmptyProposal) => return Err(ExtractError::EmptyProposal),
            other => other?,
        };
        let pair = (sample_a.group.clone(), sample_b.group.clone());
        let candidates = texts
            .iter()
            .filter_map(|t| StyleDescription::new(t, strategy, pair.clone(), run_seed))
            .collect();
        let mut out = dedup_candidates(candidates);
        out.truncate(k);
        if out.is_empty() {
            return Err(ExtractError::EmptyProposal);
        }
        Ok(out)
    }
}

fn check_inputs(sample_a: &GroupSample, sample_b: &GroupSample, k: usize) -> Result<(), ExtractError> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(ExtractError::Precondition("both samples must be non-empty".into()));
    }
    if k == 0 {
        return Err(ExtractError::Precondition("k must be at least 1".into()));
    }
    Ok(())
}

fn numbered(lines: &[String]) -> String {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{}. {l}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}
