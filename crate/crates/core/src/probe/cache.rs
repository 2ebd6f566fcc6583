use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TokenDistribution;
use crate::error::{Error, Result};

/// SHA-256 digest of (model id, operation, prompt bytes, mask bytes).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(model_id: &str, op: &str, prompt: &[u8], mask: &[u8]) -> Self {
        let mut h = Sha256::new();
        for part in [model_id.as_bytes(), op.as_bytes(), prompt, mask] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        CacheKey(hex::encode(h.finalize()))
    }

    pub fn as_hex(&self) -> &str {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CachedValue {
    Distribution(TokenDistribution),
    Trace(Vec<String>),
    LogProb(f64),
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    #[serde(flatten)]
    value: CachedValue,
}

/// Content-addressed directory with one JSON file per key.
#[derive(Clone, Debug)]
pub struct ProbeCache {
    dir: PathBuf,
}

impl ProbeCache {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(ProbeCache { dir: dir.to_owned() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.as_hex()))
    }

    /// Returns the stored value; corrupt entries are deleted and reported as misses.
    pub fn get(&self, key: &CacheKey) -> Option<CachedValue> {
        let path = self.path(key);
        let bytes = fs::read(&path).ok()?;
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(entry) if entry.key == key.as_hex() => Some(entry.value),
            _ => {
                log::warn!("discarding corrupt cache entry {}", path.display());
                let _ = fs::remove_file(&path);
                None
            }
        }
    }

    /// Stores `value` under `key`. Writing the same key twice is a no-op.
    pub fn put(&self, key: &CacheKey, value: &CachedValue) -> Result<()> {
        let path = self.path(key);
        if self.get(key).is_some() {
            return Ok(());
        }
        let entry = Entry { key: key.as_hex().to_owned(), value: value.clone() };
        let bytes = serde_json::to_vec(&entry).expect("cache entry serializes");
        let tmp = tempfile_path(&self.dir, key);
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|rd| rd.filter_map(|e| e.ok()).filter(|e| e.path().extension().is_some_and(|x| x == "json")).count())
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn tempfile_path(dir: &Path, key: &CacheKey) -> PathBuf {
    let tid = format!("{:?}", std::thread::current().id());
    let tid: String = tid.chars().filter(char::is_ascii_digit).collect();
    dir.join(format!(".{}.{}.{}.tmp", key.as_hex(), std::process::id(), tid))
}
