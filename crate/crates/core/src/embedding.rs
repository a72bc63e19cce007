use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding has no values")]
    Empty,
    #[error("embedding value at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("embedding has zero norm")]
    ZeroNorm,
}

/// Dense vector representation of an image or a text.
///
/// Construction guarantees at least one value, all values finite and a
/// strictly positive Euclidean norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEmbedding", into = "RawEmbedding")]
pub struct EmbeddingVec {
    model_id: String,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawEmbedding {
    model_id: String,
    dims: usize,
    values: Vec<f64>,
}

impl TryFrom<RawEmbedding> for EmbeddingVec {
    type Error = String;

    fn try_from(raw: RawEmbedding) -> Result<Self, Self::Error> {
        if raw.dims != raw.values.len() {
            return Err(format!("dims {} does not match {} values", raw.dims, raw.values.len()));
        }
        EmbeddingVec::new(raw.model_id, raw.values).map_err(|e| e.to_string())
    }
}

impl From<EmbeddingVec> for RawEmbedding {
    fn from(e: EmbeddingVec) -> Self {
        RawEmbedding {
            model_id: e.model_id,
            dims: e.values.len(),
            values: e.values,
        }
    }
}

impl EmbeddingVec {
    pub fn new(model_id: impl Into<String>, values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { index });
        }
        let e = EmbeddingVec {
            model_id: model_id.into(),
            values,
        };
        if !(e.norm() > 0.0) {
            return Err(EmbeddingError::ZeroNorm);
        }
        Ok(e)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-norm copy.
    pub fn normalized(&self) -> EmbeddingVec {
        let n = self.norm();
        EmbeddingVec {
            model_id: self.model_id.clone(),
            values: self.values.iter().map(|v| v / n).collect(),
        }
    }

    /// Element-wise arithmetic mean of `vectors`, or `None` when the list is
    /// empty, the dimensions disagree, or the mean is the zero vector.
    pub fn mean(vectors: &[EmbeddingVec]) -> Option<EmbeddingVec> {
        let first = vectors.first()?;
        let dims = first.dims();
        if vectors.iter().any(|v| v.dims() != dims) {
            return None;
        }
        let mut acc = vec![0.0; dims];
        for v in vectors {
            for (a, x) in acc.iter_mut().zip(&v.values) {
                *a += x;
            }
        }
        let n = vectors.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        EmbeddingVec::new(first.model_id.clone(), acc).ok()
    }
}
