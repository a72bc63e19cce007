//! Deterministic offline backend.
//!
//! Plain mode: every embedding is drawn from ChaCha8 seeded with
//! `seed XOR u64_le(digest[0..8])`, where `digest` is the SHA-256 of the
//! canonical key payload (`{"text": ..}` or `{"content_hash": ..}`). The
//! `dims` components come from `rand_distr::StandardNormal` (ziggurat) and
//! the vector is normalized to unit length, then multiplied by `scale`.
//!
//! Planted mode adds a known signal. Each group owns a unit style direction
//! (by default the basis vectors `e_0, e_1, ..` in sorted group order). The
//! style subspace `S` is the set of coordinates used by any direction.
//!
//! * An image of a planted group embeds as `direction + noise * z`, with `z`
//!   standard normal on the coordinates of `S` and zero elsewhere.
//! * A planted description embeds exactly onto its group's direction.
//! * Any other text embeds as in plain mode but restricted to the coordinates
//!   outside `S`, so it is orthogonal to every planted image and has a match
//!   score of exactly zero against all of them.
//!
//! Other answers:
//!
//! * caption: `mock caption for <first 8 hex of content hash>`;
//! * vqa: `Yes` iff cosine(image, description) > `vqa_threshold`;
//! * qa: as vqa, with the image recovered from the hash prefix in the
//!   caption (falling back to the caption's text embedding);
//! * propose: the planted descriptions of the group that dominates side A
//!   (majority of images for captions and grids, best-aligned direction for a
//!   difference embedding), then `distractors` generic sentences chosen by a
//!   generator seeded from the request digest. The number of distractors
//!   defaults to the requested `k`.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{canonical_json, Backend, BackendRequest, GatewayError, ProposerPayload, RequestKind};
use crate::dataset::DatasetManifest;
use crate::stats::cosine_slices;
use crate::text::{description_key, normalize_whitespace};
use crate::{sha256_bytes, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub seed: u64,
    pub dims: usize,
    /// Multiplies every returned embedding.
    pub scale: f64,
    pub vqa_threshold: f64,
    /// Distractor descriptions per proposal; defaults to the requested `k`.
    pub distractors: Option<usize>,
    pub planted: Option<PlantedConfig>,
    /// Exact text → vector overrides (text is whitespace-normalized).
    pub overrides: BTreeMap<String, Vec<f64>>,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            seed: 0,
            dims: 16,
            scale: 1.0,
            vqa_threshold: 0.5,
            distractors: None,
            planted: None,
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    /// Standard deviation of per-coordinate image noise inside the style subspace.
    pub noise: f64,
    /// Group → descriptions that embed exactly onto the group's direction.
    pub descriptions: BTreeMap<String, Vec<String>>,
    /// Explicit group directions. When empty every manifest group gets a
    /// basis vector in sorted order.
    pub directions: BTreeMap<String, Vec<f64>>,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            noise: 0.1,
            descriptions: BTreeMap::new(),
            directions: BTreeMap::new(),
        }
    }
}

const DISTRACTORS: &[&str] = &[
    "The photograph was taken in soft overcast daylight.",
    "The images are framed with a wide-angle lens.",
    "Several pictures include people walking near the entrance.",
    "The scenes show parked cars along the street.",
    "Trees and shrubs appear at the edges of the frame.",
    "The sky occupies a large part of each picture.",
    "Photos are shot from eye level at a moderate distance.",
    "The lighting suggests late afternoon sun.",
    "Some views are partially obstructed by lamp posts.",
    "The buildings are shown in their urban surroundings.",
    "Images have a slightly warm color balance.",
    "Pictures were taken during the summer season.",
    "The compositions place the subject near the center.",
    "The shots contain visible road markings.",
    "A few photos show reflections on wet pavement.",
    "Some images are cropped tightly around the facade.",
    "The photographs have a shallow depth of field.",
    "Clouds are visible in most of the frames.",
    "The camera is tilted upward in several views.",
    "Interior views are lit by artificial light.",
];

#[derive(Debug)]
pub struct MockBackend {
    config: MockConfig,
    id: String,
    directions: BTreeMap<String, Vec<f64>>,
    style_support: Vec<bool>,
    planted_text: HashMap<String, String>,
    image_groups: HashMap<String, String>,
    prefix_index: HashMap<String, Option<String>>,
}

impl MockBackend {
    /// `manifest` supplies group membership for planted mode and the hash
    /// prefix index used to resolve mock captions.
    pub fn new(config: MockConfig, manifest: Option<&DatasetManifest>) -> Result<Self, GatewayError> {
        if config.dims == 0 {
            return Err(GatewayError::Config("mock dims must be at least 1".into()));
        }
        if !(config.scale.is_finite() && config.scale > 0.0) {
            return Err(GatewayError::Config("mock scale must be positive".into()));
        }
        for (text, v) in &config.overrides {
            if v.len() != config.dims || !v.iter().all(|x| x.is_finite()) || v.iter().all(|x| *x == 0.0) {
                return Err(GatewayError::Config(format!(
                    "override for {text:?} must be a finite nonzero vector of length {}",
                    config.dims
                )));
            }
        }

        let mut prefix_index: HashMap<String, Option<String>> = HashMap::new();
        let mut image_groups = HashMap::new();
        let mut directions = BTreeMap::new();
        let mut style_support = vec![false; config.dims];
        let mut planted_text = HashMap::new();

        if let Some(manifest) = manifest {
            for record in manifest.records() {
                let prefix = record.content_hash[..8].to_string();
                prefix_index
                    .entry(prefix)
                    .and_modify(|slot| {
                        if slot.as_deref() != Some(record.content_hash.as_str()) {
                            *slot = None;
                        }
                    })
                    .or_insert_with(|| Some(record.content_hash.clone()));
            }
        }

        if let Some(planted) = &config.planted {
            if !(planted.noise.is_finite() && planted.noise >= 0.0) {
                return Err(GatewayError::Config("planted noise must be non-negative".into()));
            }
            let manifest =
                manifest.ok_or_else(|| GatewayError::Config("planted mode needs the dataset manifest".into()))?;
            if planted.directions.is_empty() {
                let groups = manifest.group_names();
                if groups.len() >= config.dims {
                    return Err(GatewayError::Config(format!(
                        "{} groups need more than {} mock dims for orthogonal directions",
                        groups.len(),
                        config.dims
                    )));
                }
                for (i, group) in groups.into_iter().enumerate() {
                    let mut v = vec![0.0; config.dims];
                    v[i] = 1.0;
                    directions.insert(group, v);
                }
            } else {
                for (group, v) in &planted.directions {
                    if v.len() != config.dims {
                        return Err(GatewayError::Config(format!(
                            "direction for {group} has length {}, expected {}",
                            v.len(),
                            config.dims
                        )));
                    }
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if !(norm.is_finite() && norm > 0.0) {
                        return Err(GatewayError::Config(format!("direction for {group} is zero")));
                    }
                    directions.insert(group.clone(), v.iter().map(|x| x / norm).collect());
                }
            }
            for v in directions.values() {
                for (slot, x) in style_support.iter_mut().zip(v) {
                    *slot |= *x != 0.0;
                }
            }
            if style_support.iter().all(|s| *s) {
                return Err(GatewayError::Config(
                    "style directions span every mock dimension; unrelated texts need a free one".into(),
                ));
            }
            for record in manifest.records() {
                if directions.contains_key(&record.group) {
                    image_groups.insert(record.content_hash.clone(), record.group.clone());
                }
            }
            for (group, texts) in &planted.descriptions {
                if !directions.contains_key(group) {
                    return Err(GatewayError::Config(format!(
                        "planted descriptions for {group}, which has no direction"
                    )));
                }
                for text in texts {
                    planted_text.insert(description_key(text), group.clone());
                }
            }
        }

        let id = format!(
            "mock-{}",
            &sha256_hex(canonical_json(
                &serde_json::to_value(&config).expect("config serializes")
            ))[..16]
        );
        Ok(MockBackend {
            config,
            id,
            directions,
            style_support,
            planted_text,
            image_groups,
            prefix_index,
        })
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    /// Style direction assigned to `group` in planted mode.
    pub fn direction(&self, group: &str) -> Option<&[f64]> {
        self.directions.get(group).map(Vec::as_slice)
    }

    fn rng_for(&self, digest: &[u8; 32]) -> ChaCha8Rng {
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(self.config.seed ^ u64::from_le_bytes(head))
    }

    /// Unit vector drawn from the digest, restricted to `mask` coordinates.
    fn hashed_unit(&self, digest: &[u8; 32], mask: impl Fn(usize) -> bool) -> Vec<f64> {
        let mut rng = self.rng_for(digest);
        let mut v: Vec<f64> = (0..self.config.dims)
            .map(|i| {
                let x: f64 = rng.sample(StandardNormal);
                if mask(i) {
                    x
                } else {
                    0.0
                }
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        } else if let Some(i) = (0..self.config.dims).find(|&i| mask(i)) {
            v[i] = 1.0;
        }
        v
    }

    fn text_vector(&self, text: &str) -> Vec<f64> {
        let text = normalize_whitespace(text);
        if let Some(v) = self.config.overrides.get(&text) {
            return v.clone();
        }
        if let Some(group) = self.planted_text.get(&description_key(&text)) {
            return self.directions[group].clone();
        }
        let digest = sha256_bytes(canonical_json(&json!({ "text": text })));
        if self.config.planted.is_some() {
            self.hashed_unit(&digest, |i| !self.style_support[i])
        } else {
            self.hashed_unit(&digest, |_| true)
        }
    }

    fn image_vector(&self, content_hash: &str) -> Vec<f64> {
        let digest = sha256_bytes(canonical_json(&json!({ "content_hash": content_hash })));
        match (self.image_groups.get(content_hash), &self.config.planted) {
            (Some(group), Some(planted)) => {
                let mut rng = self.rng_for(&digest);
                self.directions[group]
                    .iter()
                    .zip(&self.style_support)
                    .map(|(d, &in_style)| {
                        let z: f64 = rng.sample(StandardNormal);
                        if in_style {
                            d + planted.noise * z
                        } else {
                            *d
                        }
                    })
                    .collect()
            }
            _ => self.hashed_unit(&digest, |_| true),
        }
    }

    fn scaled(&self, v: Vec<f64>) -> Value {
        json!({ "embedding": v.into_iter().map(|x| x * self.config.scale).collect::<Vec<_>>() })
    }

    fn resolve_caption(&self, caption: &str) -> Option<&str> {
        let rest = caption.split("mock caption for ").nth(1)?;
        let prefix: String = rest.chars().take(8).collect();
        self.prefix_index.get(&prefix)?.as_deref()
    }

    fn majority_group<'s, 'h>(&'s self, hashes: impl Iterator<Item = &'h str>) -> Option<&'s str> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for hash in hashes {
            if let Some(group) = self.image_groups.get(hash) {
                *counts.entry(group.as_str()).or_default() += 1;
            }
        }
        // Highest count; ties go to the alphabetically first group.
        counts
            .into_iter()
            .fold(None, |best: Option<(&str, usize)>, (g, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((g, c)),
            })
            .map(|(g, _)| g)
    }

    fn side_a_group<'s>(&'s self, payload: &ProposerPayload) -> Option<&'s str> {
        match payload {
            ProposerPayload::CaptionsPair { captions_a, .. } => {
                self.majority_group(captions_a.iter().filter_map(|c| self.resolve_caption(c)))
            }
            ProposerPayload::GridImages { images_a, .. } => {
                self.majority_group(images_a.iter().map(|r| r.content_hash.as_str()))
            }
            ProposerPayload::DiffEmbedding { embedding } => self
                .directions
                .iter()
                .filter_map(|(g, d)| Some((g, cosine_slices(embedding.values(), d).ok()?)))
                .filter(|(_, c)| *c > 0.0)
                .fold(None, |best: Option<(&String, f64)>, (g, c)| match best {
                    Some((_, bc)) if bc >= c => best,
                    _ => Some((g, c)),
                })
                .map(|(g, _)| g.as_str()),
        }
    }

    fn propose(&self, request: &BackendRequest) -> Result<Value, GatewayError> {
        let k = request.body["k"].as_u64().unwrap_or(1) as usize;
        let payload: ProposerPayload = serde_json::from_value(request.body["payload"].clone())
            .map_err(|e| GatewayError::BackendRejected(format!("bad proposer payload: {e}")))?;

        let mut lines: Vec<String> = Vec::new();
        if let (Some(planted), Some(group)) = (&self.config.planted, self.side_a_group(&payload)) {
            if let Some(texts) = planted.descriptions.get(group) {
                lines.extend(texts.iter().cloned());
            }
        }
        let wanted = self.config.distractors.unwrap_or(k).min(DISTRACTORS.len());
        let mut rng = self.rng_for(&request.payload_digest);
        let picks = index::sample(&mut rng, DISTRACTORS.len(), wanted);
        lines.extend(picks.into_iter().map(|i| DISTRACTORS[i].to_string()));

        let reply: String = lines
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{}. {l}\n", i + 1))
            .collect();
        Ok(json!({ "text": reply }))
    }

    fn answer(&self, image: &[f64], description: &str) -> Value {
        let text = self.text_vector(description);
        let matched = cosine_slices(image, &text)
            .map(|c| c > self.config.vqa_threshold)
            .unwrap_or(false);
        json!({ "answer": if matched { "Yes" } else { "No" } })
    }
}

fn str_field<'a>(body: &'a Value, path: &[&str]) -> Result<&'a str, GatewayError> {
    let mut v = body;
    for p in path {
        v = &v[*p];
    }
    v.as_str()
        .ok_or_else(|| GatewayError::BackendRejected(format!("missing field {}", path.join("."))))
}

impl Backend for MockBackend {
    fn backend_id(&self) -> String {
        self.id.clone()
    }

    fn call(&self, request: &BackendRequest) -> Result<Value, GatewayError> {
        let body = &request.body;
        match request.kind {
            RequestKind::EmbedText => Ok(self.scaled(self.text_vector(str_field(body, &["text"])?))),
            RequestKind::EmbedImage => {
                let hash = str_field(body, &["image", "content_hash"])?;
                Ok(self.scaled(self.image_vector(hash)))
            }
            RequestKind::Caption => {
                let hash = str_field(body, &["image", "content_hash"])?;
                Ok(json!({ "text": format!("mock caption for {}", &hash[..8.min(hash.len())]) }))
            }
            RequestKind::Propose => self.propose(request),
            RequestKind::Vqa => {
                let hash = str_field(body, &["image", "content_hash"])?;
                let description = str_field(body, &["description"])?;
                Ok(self.answer(&self.image_vector(hash), description))
            }
            RequestKind::Qa => {
                let caption = str_field(body, &["caption"])?;
                let description = str_field(body, &["description"])?;
                let subject = match self.resolve_caption(caption) {
                    Some(hash) => self.image_vector(hash),
                    None => self.text_vector(caption),
                };
                Ok(self.answer(&subject, description))
            }
        }
    }
}
