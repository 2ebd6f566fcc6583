use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Writes one JSON value per line, atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::InvalidOutput(e.to_string()))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value).map_err(|e| Error::InvalidOutput(e.to_string()))?;
    buf.push(b'\n');
    write_atomic(path, &buf)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Stable 64-bit seed for one statement, independent of corpus order.
pub fn statement_seed(seed: u64, query_id: &str, statement_index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((query_id.len() as u64).to_le_bytes());
    h.update(query_id.as_bytes());
    h.update((statement_index as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// File names inside a run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn translations(&self) -> PathBuf {
        self.root.join("translations.jsonl")
    }
    pub fn query_translations(&self) -> PathBuf {
        self.root.join("query_translations.jsonl")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports.jsonl")
    }
    pub fn pool(&self) -> PathBuf {
        self.root.join("pool.jsonl")
    }
    pub fn filter_outcomes(&self) -> PathBuf {
        self.root.join("filter_outcomes.jsonl")
    }
    pub fn pool_stats(&self) -> PathBuf {
        self.root.join("pool_stats.json")
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }
    pub fn traces(&self) -> PathBuf {
        self.root.join("traces.jsonl")
    }
    pub fn attributions(&self) -> PathBuf {
        self.root.join("attributions.jsonl")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }
    pub fn results(&self) -> PathBuf {
        self.root.join("results.json")
    }
    pub fn table(&self) -> PathBuf {
        self.root.join("table.csv")
    }
    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed_at: u64,
    pub outputs: Vec<String>,
}

/// Run bookkeeping. Timestamps live here only, never in stage outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub pool_digest: Option<String>,
    pub model_id: String,
    pub backend_model_id: Option<String>,
    pub created_at: u64,
    pub updated_at: u64,
    pub stages: BTreeMap<String, StageRecord>,
    /// Probe cells by `variant` display name.
    pub cells: BTreeMap<String, bool>,
    pub notices: Vec<String>,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(config_digest: String, model_id: &str) -> Self {
        let t = now();
        RunManifest {
            config_digest,
            pool_digest: None,
            model_id: model_id.to_owned(),
            backend_model_id: None,
            created_at: t,
            updated_at: t,
            stages: BTreeMap::new(),
            cells: BTreeMap::new(),
            notices: Vec::new(),
        }
    }

    pub fn is_complete(&self, stage: &str, layout: &Layout) -> bool {
        self.stages.get(stage).is_some_and(|r| r.outputs.iter().all(|o| layout.root.join(o).exists()))
    }

    pub fn mark(&mut self, stage: &str, outputs: &[&Path]) {
        let outputs = outputs
            .iter()
            .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
            .collect();
        self.updated_at = now();
        self.stages.insert(stage.to_owned(), StageRecord { completed_at: self.updated_at, outputs });
    }

    /// Drops records for `stage` and everything after it.
    pub fn invalidate_from(&mut self, stage_order: &[&str], stage: &str) {
        if let Some(pos) = stage_order.iter().position(|s| *s == stage) {
            for s in &stage_order[pos..] {
                self.stages.remove(*s);
            }
        }
    }

    pub fn notice(&mut self, message: String) {
        log::warn!("{message}");
        if !self.notices.contains(&message) {
            self.notices.push(message);
        }
    }
}
