//! Dataset manifests, seeded group sampling and pair enumeration.
//!
//! Manifest format (UTF-8, one record per line):
//!
//! ```text
//! archdiff-manifest v1
//! #@ source = example
//! # free comment
//! img-001<TAB>zaha hadid<TAB>images/zaha/001.jpg<TAB><64 hex sha256>
//! ```
//!
//! The first line is the literal header. Lines starting with `#@` carry
//! `key = value` metadata; the `groups` key, if present, lists group names
//! (comma-separated) that must each have at least one record. Other `#` lines
//! are comments. Record fields are tab-separated and may not contain tabs.
//!
//! Sampling uses ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`) and draws
//! without replacement, so a sample is a pure function of the group's
//! record order, `n` and the seed.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_HEADER: &str = "archdiff-manifest v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed manifest at line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
    #[error("duplicate image id `{id}` at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("group `{group}` has no records")]
    EmptyGroup { group: String },
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("sample size must be at least 1")]
    InvalidSampleSize,
    #[error("at least 2 groups are required, manifest has {0}")]
    NotEnoughGroups(usize),
    #[error("invalid image record: {0}")]
    InvalidRecord(String),
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub group: String,
    pub uri: String,
    /// Lowercase hex SHA-256 of the image bytes.
    pub content_hash: String,
}

impl ImageRecord {
    pub fn new(
        id: impl Into<String>,
        group: impl Into<String>,
        uri: impl Into<String>,
        content_hash: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        let record = ImageRecord {
            id: id.into(),
            group: group.into(),
            uri: uri.into(),
            content_hash: content_hash.into(),
        };
        record.validate().map_err(DatasetError::InvalidRecord)?;
        Ok(record)
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.group.is_empty() {
            return Err(format!("record `{}` has an empty group", self.id));
        }
        if !is_sha256_hex(&self.content_hash) {
            return Err(format!(
                "record `{}` content hash is not 64 lowercase hex characters",
                self.id
            ));
        }
        for field in [&self.id, &self.group, &self.uri, &self.content_hash] {
            if field.contains(['\t', '\n', '\r']) {
                return Err(format!("record `{}` has a tab or newline in a field", self.id));
            }
        }
        Ok(())
    }
}

fn is_sha256_hex(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    groups: BTreeMap<String, Vec<ImageRecord>>,
    metadata: BTreeMap<String, String>,
}

impl DatasetManifest {
    /// Builds a manifest from records, keeping their relative order per group.
    pub fn from_records(
        records: impl IntoIterator<Item = ImageRecord>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        let mut groups: BTreeMap<String, Vec<ImageRecord>> = BTreeMap::new();
        for (i, record) in records.into_iter().enumerate() {
            record.validate().map_err(DatasetError::InvalidRecord)?;
            if !seen.insert(record.id.clone()) {
                return Err(DatasetError::DuplicateId {
                    id: record.id,
                    line: i + 1,
                });
            }
            groups.entry(record.group.clone()).or_default().push(record);
        }
        Ok(DatasetManifest { groups, metadata })
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, first)) if first.trim_end() == MANIFEST_HEADER => {}
            _ => {
                return Err(DatasetError::MalformedManifest {
                    line: 1,
                    reason: format!("expected header `{MANIFEST_HEADER}`"),
                })
            }
        }

        let mut metadata = BTreeMap::new();
        let mut seen = HashSet::new();
        let mut groups: BTreeMap<String, Vec<ImageRecord>> = BTreeMap::new();
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix("#@") {
                let (key, value) = meta.split_once('=').ok_or_else(|| DatasetError::MalformedManifest {
                    line: line_no,
                    reason: "metadata line must be `#@ key = value`".into(),
                })?;
                metadata.insert(key.trim().to_string(), value.trim().to_string());
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(DatasetError::MalformedManifest {
                    line: line_no,
                    reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let record = ImageRecord {
                id: fields[0].to_string(),
                group: fields[1].to_string(),
                uri: fields[2].to_string(),
                content_hash: fields[3].to_string(),
            };
            record
                .validate()
                .map_err(|reason| DatasetError::MalformedManifest { line: line_no, reason })?;
            if !seen.insert(record.id.clone()) {
                return Err(DatasetError::DuplicateId {
                    id: record.id,
                    line: line_no,
                });
            }
            groups.entry(record.group.clone()).or_default().push(record);
        }

        if let Some(declared) = metadata.get("groups") {
            for group in declared.split(',').map(str::trim).filter(|g| !g.is_empty()) {
                if !groups.contains_key(group) {
                    return Err(DatasetError::EmptyGroup {
                        group: group.to_string(),
                    });
                }
            }
        }
        Ok(DatasetManifest { groups, metadata })
    }

    pub fn to_manifest_string(&self) -> String {
        let mut out = String::new();
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "#@ {k} = {v}");
        }
        for r in self.records() {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", r.id, r.group, r.uri, r.content_hash);
        }
        out
    }

    pub fn groups(&self) -> impl Iterator<Item = (&str, &[ImageRecord])> {
        self.groups.iter().map(|(g, r)| (g.as_str(), r.as_slice()))
    }

    pub fn group_names(&self) -> Vec<String> {
        self.groups.keys().cloned().collect()
    }

    pub fn group(&self, name: &str) -> Result<&[ImageRecord], DatasetError> {
        self.groups
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| DatasetError::UnknownGroup(name.to_string()))
    }

    pub fn records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.groups.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    DatasetManifest::parse(&text)
}

/// An ordered subset of one group, drawn without replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub group: String,
    pub records: Vec<ImageRecord>,
    pub seed: u64,
    pub requested_n: usize,
}

impl GroupSample {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Draws `min(n, group size)` records. An undersized group is returned
/// whole, in manifest order.
pub fn sample_group(manifest: &DatasetManifest, group: &str, n: usize, seed: u64) -> Result<GroupSample, DatasetError> {
    let pool = manifest.group(group)?;
    if n == 0 {
        return Err(DatasetError::InvalidSampleSize);
    }
    let records = if pool.len() <= n {
        pool.to_vec()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, pool.len(), n)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect()
    };
    Ok(GroupSample {
        group: group.to_string(),
        records,
        seed,
        requested_n: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    /// Every `(a, b)` with `a != b`: `k(k-1)` pairs.
    #[default]
    OrderedNoSelf,
    /// Every `{a, b}` once with `a < b`: `k(k-1)/2` pairs.
    Unordered,
    /// Every `(a, b)` including `a == b`: `k^2` pairs.
    OrderedWithSelf,
}

impl PairMode {
    pub fn allows_self(self) -> bool {
        matches!(self, PairMode::OrderedWithSelf)
    }
}

/// Group pairs in lexicographic order.
pub fn enumerate_pairs(manifest: &DatasetManifest, mode: PairMode) -> Result<Vec<(String, String)>, DatasetError> {
    let names = manifest.group_names();
    if names.len() < 2 {
        return Err(DatasetError::NotEnoughGroups(names.len()));
    }
    let mut pairs = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for (j, b) in names.iter().enumerate() {
            let keep = match mode {
                PairMode::OrderedNoSelf => i != j,
                PairMode::Unordered => i < j,
                PairMode::OrderedWithSelf => true,
            };
            if keep {
                pairs.push((a.clone(), b.clone()));
            }
        }
    }
    Ok(pairs)
}
