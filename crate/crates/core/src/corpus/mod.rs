//! Data model and ingestion: queries, evidence documents, multi-parallel
//! translations, reference reports and statement segmentation.

mod dataset;
mod prompt;
mod report;
mod segment;
mod translate;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{load_dataset, parse_dataset, DatasetEntry, DatasetFormat};
pub use prompt::{normalize_field, render_document_blocks, render_report_prompt, DEFAULT_TOTAL_WORDS};
pub use report::{generate_reference_report, TextGenerator};
pub use segment::{segment_report, segment_report_tolerant, DropReason, DroppedSpan, Segmentation};
pub use translate::{
    score_translation_quality, translate_document_set, translate_query, translated_document_set, QualityEstimator,
    TranslationKey, TranslationStore, Translator,
};

/// Maximum number of evidence documents per query; citation ids must stay single digits.
pub const MAX_DOCS: usize = 9;

/// Two-letter ISO 639-1 language code.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageTag(String);

impl LanguageTag {
    pub fn new(code: &str) -> Result<Self> {
        let ok = code.len() == 2 && code.bytes().all(|b| b.is_ascii_lowercase());
        if !ok {
            return Err(Error::domain(format!("language code must be two lowercase ASCII letters, got {code:?}")));
        }
        Ok(LanguageTag(code.to_owned()))
    }

    /// The pivot language every contrast is measured against.
    pub fn en() -> Self {
        LanguageTag("en".to_owned())
    }

    pub fn is_en(&self) -> bool {
        self.0 == "en"
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// English display name used when a prompt asks for a response language.
    pub fn display_name(&self) -> &str {
        match self.0.as_str() {
            "ar" => "Arabic",
            "bn" => "Bengali",
            "de" => "German",
            "en" => "English",
            "es" => "Spanish",
            "fr" => "French",
            "hi" => "Hindi",
            "ja" => "Japanese",
            "ko" => "Korean",
            "pt" => "Portuguese",
            "ru" => "Russian",
            "sw" => "Swahili",
            "zh" => "Chinese",
            other => other,
        }
    }
}

impl TryFrom<String> for LanguageTag {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        LanguageTag::new(&value)
    }
}

impl From<LanguageTag> for String {
    fn from(tag: LanguageTag) -> String {
        tag.0
    }
}

impl std::str::FromStr for LanguageTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LanguageTag::new(s)
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub language: LanguageTag,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>, language: LanguageTag) -> Result<Self> {
        let text = text.into();
        let id = id.into();
        if text.trim().is_empty() {
            return Err(Error::Constraint { query_id: id, message: "empty query text".into() });
        }
        Ok(Query { id, text, language })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceDocument {
    pub doc_id: u8,
    pub title: String,
    pub content: String,
    pub language: LanguageTag,
    #[serde(default = "default_relevant")]
    pub relevant: bool,
}

fn default_relevant() -> bool {
    true
}

/// Ordered evidence documents for one query, with ids exactly `1..=K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDocumentSet")]
pub struct DocumentSet {
    query_id: String,
    docs: Vec<EvidenceDocument>,
}

#[derive(Deserialize)]
struct RawDocumentSet {
    query_id: String,
    docs: Vec<EvidenceDocument>,
}

impl TryFrom<RawDocumentSet> for DocumentSet {
    type Error = Error;
    fn try_from(raw: RawDocumentSet) -> Result<Self> {
        DocumentSet::new(raw.query_id, raw.docs)
    }
}

impl DocumentSet {
    pub fn new(query_id: impl Into<String>, docs: Vec<EvidenceDocument>) -> Result<Self> {
        let query_id = query_id.into();
        let violation = |message: String| Error::Constraint { query_id: query_id.clone(), message };
        if docs.is_empty() {
            return Err(violation("document set is empty".into()));
        }
        if docs.len() > MAX_DOCS {
            return Err(violation(format!("{} documents exceeds the limit of {MAX_DOCS}", docs.len())));
        }
        let mut ids: Vec<u8> = docs.iter().map(|d| d.doc_id).collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &id)| usize::from(id) != i + 1) {
            return Err(violation("non-contiguous doc ids".into()));
        }
        if let Some(d) = docs.iter().find(|d| d.content.trim().is_empty()) {
            return Err(violation(format!("doc {} has empty content", d.doc_id)));
        }
        Ok(DocumentSet { query_id, docs })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn docs(&self) -> &[EvidenceDocument] {
        &self.docs
    }

    /// Number of documents, `K`.
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: u8) -> Option<&EvidenceDocument> {
        self.docs.iter().find(|d| d.doc_id == doc_id)
    }

    /// 1-based position of `doc_id` within the rendered order.
    pub fn ordinal_of(&self, doc_id: u8) -> Option<usize> {
        self.docs.iter().position(|d| d.doc_id == doc_id).map(|i| i + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub query_id: String,
    pub doc_id: u8,
    pub language: LanguageTag,
    pub title_translated: String,
    pub content_translated: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qe_score: Option<f64>,
}

impl TranslationRecord {
    pub fn key(&self) -> TranslationKey {
        TranslationKey::new(&self.query_id, self.doc_id, &self.language)
    }
}

/// One report sentence span paired with exactly one citation id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub index: usize,
    pub text: String,
    pub citation_id: u8,
    #[serde(default)]
    pub verified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub query_id: String,
    /// Language the report was written in.
    pub language: LanguageTag,
    pub raw_text: String,
    pub statements: Vec<Statement>,
    #[serde(default)]
    pub dropped: Vec<DroppedSpan>,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn doc(id: u8, content: &str) -> EvidenceDocument {
        EvidenceDocument {
            doc_id: id,
            title: format!("Title {id}"),
            content: content.to_owned(),
            language: LanguageTag::en(),
            relevant: true,
        }
    }

    #[test]
    fn language_tag_validation() {
        assert!(LanguageTag::new("sw").is_ok());
        assert!(LanguageTag::new("EN").is_err());
        assert!(LanguageTag::new("eng").is_err());
        assert!(LanguageTag::new("").is_err());
        assert!(LanguageTag::en().is_en());
        let parsed: LanguageTag = serde_json::from_str("\"fr\"").unwrap();
        assert_eq!(parsed.as_str(), "fr");
        assert!(serde_json::from_str::<LanguageTag>("\"xyz\"").is_err());
    }

    #[test]
    fn document_set_rejects_gaps_and_oversize() {
        let err = DocumentSet::new("q", vec![doc(1, "a"), doc(2, "b"), doc(4, "c")]).unwrap_err();
        assert!(err.to_string().contains("non-contiguous doc ids"), "{err}");

        let many: Vec<_> = (1..=10).map(|i| doc(i, "x")).collect();
        let err = DocumentSet::new("q10", many).unwrap_err();
        assert!(matches!(err, Error::Constraint { ref query_id, .. } if query_id == "q10"));

        assert!(DocumentSet::new("q", vec![doc(1, "a"), doc(1, "b")]).is_err());
        assert!(DocumentSet::new("q", vec![doc(1, "  ")]).is_err());
    }

    #[test]
    fn ordinal_follows_order_not_id() {
        let set = DocumentSet::new("q", vec![doc(2, "b"), doc(1, "a")]).unwrap();
        assert_eq!(set.ordinal_of(2), Some(1));
        assert_eq!(set.ordinal_of(1), Some(2));
        assert_eq!(set.ordinal_of(3), None);
    }

    #[test]
    fn query_requires_text() {
        assert!(Query::new("q", "   ", LanguageTag::en()).is_err());
    }
}
