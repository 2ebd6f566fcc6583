use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DocumentSet, LanguageTag, Query, TranslationRecord};
use crate::error::{with_retries, Error, Result};

/// Machine translation behind an adapter.
pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, source: &LanguageTag, target: &LanguageTag) -> Result<String>;
}

/// Reference-free translation quality estimation.
pub trait QualityEstimator: Send + Sync {
    fn score(&self, source: &str, hypothesis: &str) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TranslationKey {
    pub query_id: String,
    pub doc_id: u8,
    pub language: LanguageTag,
}

impl TranslationKey {
    pub fn new(query_id: &str, doc_id: u8, language: &LanguageTag) -> Self {
        TranslationKey { query_id: query_id.to_owned(), doc_id, language: language.clone() }
    }
}

/// Cache of translation records. Entries are immutable once inserted;
/// only [`TranslationStore::purge`] removes them.
#[derive(Debug, Default)]
pub struct TranslationStore {
    records: RwLock<BTreeMap<TranslationKey, TranslationRecord>>,
}

impl TranslationStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = TranslationRecord>) -> Result<Self> {
        let store = Self::new();
        for r in records {
            let key = r.key();
            if store.insert(r).is_some() {
                return Err(Error::domain(format!("duplicate translation record {key:?}")));
            }
        }
        Ok(store)
    }

    /// Loads a line-delimited translations file; a missing file yields an empty store.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::new());
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: TranslationRecord =
                serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            records.push(rec);
        }
        Self::from_records(records)
    }

    /// Writes all records in key order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for rec in self.records.read().expect("translation store poisoned").values() {
            serde_json::to_writer(&mut out, rec).expect("record serializes");
            out.push(b'\n');
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("jsonl.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&out).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, key: &TranslationKey) -> Option<TranslationRecord> {
        self.records.read().expect("translation store poisoned").get(key).cloned()
    }

    pub fn lookup(&self, query_id: &str, doc_id: u8, language: &LanguageTag) -> Option<TranslationRecord> {
        self.get(&TranslationKey::new(query_id, doc_id, language))
    }

    /// Inserts `record` unless the key is already cached; returns the cached
    /// record in that case.
    pub fn insert(&self, record: TranslationRecord) -> Option<TranslationRecord> {
        let mut guard = self.records.write().expect("translation store poisoned");
        match guard.get(&record.key()) {
            Some(existing) => Some(existing.clone()),
            None => {
                guard.insert(record.key(), record);
                None
            }
        }
    }

    /// Attaches a quality-estimation score to an existing record.
    pub fn set_qe_score(&self, key: &TranslationKey, score: f64) -> Result<()> {
        let mut guard = self.records.write().expect("translation store poisoned");
        let rec = guard
            .get_mut(key)
            .ok_or(Error::MissingTranslation { doc_id: key.doc_id, language: key.language.to_string() })?;
        rec.qe_score = Some(score);
        Ok(())
    }

    pub fn purge(&self) {
        self.records.write().expect("translation store poisoned").clear();
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("translation store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<TranslationRecord> {
        self.records.read().expect("translation store poisoned").values().cloned().collect()
    }
}

fn translate_field(
    translator: &dyn Translator,
    text: &str,
    source: &LanguageTag,
    target: &LanguageTag,
    doc_id: u8,
    retries: usize,
) -> Result<String> {
    if text.trim().is_empty() {
        return Ok(String::new());
    }
    let out = with_retries(retries, || translator.translate(text, source, target)).map_err(|e| match e {
        Error::Transport { message, .. } => Error::Transport { doc_id: Some(doc_id), message },
        other => other,
    })?;
    if out.trim().is_empty() {
        return Err(Error::InvalidOutput(format!("empty translation for doc {doc_id} into {target}")));
    }
    Ok(out)
}

/// Translates every document of `docs` into `target`, reusing cached records.
///
/// Titles and contents are translated independently; documents are
/// translated concurrently. The input set is not modified.
pub fn translate_document_set(
    docs: &DocumentSet,
    target: &LanguageTag,
    translator: &dyn Translator,
    store: &TranslationStore,
    retries: usize,
) -> Result<Vec<TranslationRecord>> {
    if let Some(d) = docs.docs().iter().find(|d| &d.language == target) {
        return Err(Error::domain(format!("doc {} is already in {target}", d.doc_id)));
    }
    docs.docs()
        .par_iter()
        .map(|doc| {
            let key = TranslationKey::new(docs.query_id(), doc.doc_id, target);
            if let Some(hit) = store.get(&key) {
                return Ok(hit);
            }
            let title = translate_field(translator, &doc.title, &doc.language, target, doc.doc_id, retries)?;
            let content = translate_field(translator, &doc.content, &doc.language, target, doc.doc_id, retries)?;
            let rec = TranslationRecord {
                query_id: docs.query_id().to_owned(),
                doc_id: doc.doc_id,
                language: target.clone(),
                title_translated: title,
                content_translated: content,
                qe_score: None,
            };
            Ok(store.insert(rec.clone()).unwrap_or(rec))
        })
        .collect()
}

/// The document set with every document replaced by its cached translation
/// into `language`. Ids, order and relevance flags are preserved.
pub fn translated_document_set(
    docs: &DocumentSet,
    language: &LanguageTag,
    store: &TranslationStore,
) -> Result<DocumentSet> {
    let translated = docs
        .docs()
        .iter()
        .map(|d| {
            if &d.language == language {
                return Ok(d.clone());
            }
            let rec = store
                .lookup(docs.query_id(), d.doc_id, language)
                .ok_or(Error::MissingTranslation { doc_id: d.doc_id, language: language.to_string() })?;
            Ok(super::EvidenceDocument {
                doc_id: d.doc_id,
                title: rec.title_translated,
                content: rec.content_translated,
                language: language.clone(),
                relevant: d.relevant,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DocumentSet::new(docs.query_id(), translated)
}

pub fn translate_query(
    query: &Query,
    target: &LanguageTag,
    translator: &dyn Translator,
    retries: usize,
) -> Result<Query> {
    if &query.language == target {
        return Ok(query.clone());
    }
    let text = with_retries(retries, || translator.translate(&query.text, &query.language, target))?;
    if text.trim().is_empty() {
        return Err(Error::InvalidOutput(format!("empty translation of query {}", query.id)));
    }
    Query::new(query.id.clone(), text, target.clone())
}

/// Returns the estimator's score unchanged after checking it lies in `[0, 1]`.
pub fn score_translation_quality(
    source: &str,
    hypothesis: &str,
    scorer: &dyn QualityEstimator,
    retries: usize,
) -> Result<f64> {
    if source.trim().is_empty() || hypothesis.trim().is_empty() {
        return Err(Error::domain("quality estimation needs non-empty source and hypothesis"));
    }
    let score = with_retries(retries, || scorer.score(source, hypothesis))?;
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Range { value: score, lo: 0.0, hi: 1.0 });
    }
    Ok(score)
}
