use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::RequestKind;

/// One cached backend response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub kind: RequestKind,
    pub payload_hash: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub response: Value,
}

/// Content-addressed response store at `{root}/{kind}/{hash[..2]}/{hash}.bin`.
///
/// Entries are written to a temporary file in the target directory and then
/// renamed into place, so readers never observe a partial entry.
#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(DiskCache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, kind: RequestKind, hash: &str) -> PathBuf {
        self.root
            .join(kind.as_str())
            .join(&hash[..2.min(hash.len())])
            .join(format!("{hash}.bin"))
    }

    /// Returns `None` on a miss. Unreadable or corrupt entries count as misses.
    pub fn get(&self, kind: RequestKind, hash: &str) -> Option<CacheEntry> {
        let path = self.path_for(kind, hash);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.payload_hash == hash => Some(entry),
            Ok(_) => {
                log::warn!("cache entry {} has a mismatched hash, ignoring", path.display());
                None
            }
            Err(e) => {
                log::warn!("corrupt cache entry {}: {e}", path.display());
                None
            }
        }
    }

    pub fn put(&self, entry: &CacheEntry) -> io::Result<()> {
        let path = self.path_for(entry.kind, &entry.payload_hash);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer(&mut tmp, entry)?;
        tmp.flush()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}
