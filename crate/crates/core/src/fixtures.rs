//! Synthetic datasets for tests, examples and offline dry runs.

use std::collections::BTreeMap;

use crate::dataset::{DatasetManifest, ImageRecord};
use crate::sha256_hex;
use crate::text::slug;

/// A manifest with `count` records per named group. Content hashes are the
/// SHA-256 of `"<group>/<index>"`, so they are stable across runs.
pub fn synthetic_manifest(groups: &[(&str, usize)]) -> DatasetManifest {
    let records = groups.iter().flat_map(|&(group, count)| {
        (0..count).map(move |i| {
            ImageRecord::new(
                format!("{}-{i:03}", slug(group)),
                group,
                format!("images/{}/{i:03}.jpg", slug(group)),
                sha256_hex(format!("{group}/{i}")),
            )
            .expect("synthetic record is valid")
        })
    });
    DatasetManifest::from_records(records, BTreeMap::new()).expect("synthetic ids are unique")
}
