use serde::{Deserialize, Serialize};

use crate::dataset::ImageRecord;
use crate::embedding::EmbeddingVec;

/// Reference to one image sent to a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub uri: String,
    pub content_hash: String,
}

impl From<&ImageRecord> for ImageRef {
    fn from(r: &ImageRecord) -> Self {
        ImageRef {
            id: r.id.clone(),
            uri: r.uri.clone(),
            content_hash: r.content_hash.clone(),
        }
    }
}

/// Row-major grid: image `i` sits at row `i / cols`, column `i % cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
}

impl GridLayout {
    /// Smallest near-square grid holding `n` images: `cols = ceil(sqrt(n))`.
    pub fn for_count(n: usize) -> GridLayout {
        if n == 0 {
            return GridLayout { rows: 0, cols: 0 };
        }
        let mut cols = (n as f64).sqrt().floor() as usize;
        if cols * cols < n {
            cols += 1;
        }
        GridLayout {
            rows: n.div_ceil(cols),
            cols,
        }
    }
}

/// Input to the proposer, one variant per extraction strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ProposerPayload {
    CaptionsPair {
        captions_a: Vec<String>,
        captions_b: Vec<String>,
    },
    GridImages {
        grid_a: GridLayout,
        grid_b: GridLayout,
        images_a: Vec<ImageRef>,
        images_b: Vec<ImageRef>,
    },
    DiffEmbedding {
        embedding: EmbeddingVec,
    },
}

impl ProposerPayload {
    pub(crate) fn validate(&self) -> Result<(), String> {
        match self {
            ProposerPayload::CaptionsPair { captions_a, captions_b } => {
                if captions_a.is_empty() || captions_b.is_empty() {
                    return Err("caption lists must be non-empty".into());
                }
            }
            ProposerPayload::GridImages { images_a, images_b, .. } => {
                if images_a.is_empty() || images_b.is_empty() {
                    return Err("grid image lists must be non-empty".into());
                }
            }
            ProposerPayload::DiffEmbedding { .. } => {}
        }
        Ok(())
    }
}
