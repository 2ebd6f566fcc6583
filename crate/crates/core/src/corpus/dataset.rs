use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use super::{DocumentSet, EvidenceDocument, LanguageTag, Query};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    /// Long-form questions whose evidence documents are all relevant.
    Eli5Webgpt,
    /// Queries with exactly one relevant document plus distractors.
    Miracl,
}

impl FromStr for DatasetFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eli5_webgpt" | "eli5" => Ok(DatasetFormat::Eli5Webgpt),
            "miracl" => Ok(DatasetFormat::Miracl),
            other => Err(Error::Config(format!("unknown dataset format {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub query: Query,
    pub docs: DocumentSet,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    query_id: String,
    query_text: String,
    query_language: String,
    documents: Vec<RawDocument>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    doc_id: u8,
    #[serde(default)]
    title: String,
    content: String,
    #[serde(default)]
    relevant: Option<bool>,
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<DatasetEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, format)
}

/// Parses line-delimited dataset records. Blank lines are skipped.
pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Vec<DatasetEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let raw: RawRecord =
            serde_json::from_str(line).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let language = LanguageTag::new(&raw.query_language)
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let query = Query::new(raw.query_id.clone(), raw.query_text, language.clone())?;

        let default_relevant = format == DatasetFormat::Eli5Webgpt;
        let docs: Vec<EvidenceDocument> = raw
            .documents
            .into_iter()
            .map(|d| EvidenceDocument {
                doc_id: d.doc_id,
                title: d.title,
                content: d.content,
                language: language.clone(),
                relevant: d.relevant.unwrap_or(default_relevant),
            })
            .collect();
        let docs = DocumentSet::new(raw.query_id.clone(), docs)?;

        let relevant = docs.docs().iter().filter(|d| d.relevant).count();
        match format {
            DatasetFormat::Eli5Webgpt if relevant != docs.len() => {
                return Err(Error::Constraint {
                    query_id: raw.query_id,
                    message: "eli5_webgpt records must mark every document relevant".into(),
                });
            }
            DatasetFormat::Miracl if relevant != 1 => {
                return Err(Error::Constraint {
                    query_id: raw.query_id,
                    message: format!("miracl records need exactly one relevant document, found {relevant}"),
                });
            }
            _ => {}
        }
        out.push(DatasetEntry { query, docs });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, doc_ids: &[u8]) -> String {
        let docs: Vec<String> =
            doc_ids.iter().map(|d| format!(r#"{{"doc_id":{d},"title":"t{d}","content":"content {d}"}}"#)).collect();
        format!(r#"{{"query_id":"{id}","query_text":"why?","query_language":"en","documents":[{}]}}"#, docs.join(","))
    }

    #[test]
    fn empty_input_yields_nothing() {
        assert!(parse_dataset("", DatasetFormat::Eli5Webgpt).unwrap().is_empty());
        assert!(parse_dataset("\n\n", DatasetFormat::Miracl).unwrap().is_empty());
    }

    #[test]
    fn one_entry_per_line() {
        let text: Vec<String> = (0..270).map(|i| record(&format!("q{i}"), &[1, 2, 3])).collect();
        let entries = parse_dataset(&text.join("\n"), DatasetFormat::Eli5Webgpt).unwrap();
        assert_eq!(entries.len(), 270);
        assert!(entries.iter().all(|e| e.docs.docs().iter().all(|d| d.relevant)));
    }

    #[test]
    fn gap_in_ids_is_rejected() {
        let err = parse_dataset(&record("q7", &[1, 2, 4]), DatasetFormat::Eli5Webgpt).unwrap_err();
        assert!(err.to_string().contains("non-contiguous doc ids"));
    }

    #[test]
    fn too_many_docs_names_query() {
        let ids: Vec<u8> = (1..=10).collect();
        let err = parse_dataset(&record("big", &ids), DatasetFormat::Eli5Webgpt).unwrap_err();
        match err {
            Error::Constraint { query_id, .. } => assert_eq!(query_id, "big"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = format!("{}\n{{not json\n", record("a", &[1]));
        match parse_dataset(&text, DatasetFormat::Eli5Webgpt).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn miracl_requires_single_relevant() {
        let ok = r#"{"query_id":"m1","query_text":"q","query_language":"en","documents":[{"doc_id":1,"title":"a","content":"x","relevant":true},{"doc_id":2,"title":"b","content":"y"},{"doc_id":3,"title":"c","content":"z","relevant":false}]}"#;
        let entries = parse_dataset(ok, DatasetFormat::Miracl).unwrap();
        let rel: Vec<u8> = entries[0].docs.docs().iter().filter(|d| d.relevant).map(|d| d.doc_id).collect();
        assert_eq!(rel, vec![1]);

        let none = record("m2", &[1, 2]);
        assert!(parse_dataset(&none, DatasetFormat::Miracl).is_err());
    }

    #[test]
    fn eli5_rejects_irrelevant_docs() {
        let text = r#"{"query_id":"e","query_text":"q","query_language":"en","documents":[{"doc_id":1,"title":"a","content":"x","relevant":false}]}"#;
        assert!(parse_dataset(text, DatasetFormat::Eli5Webgpt).is_err());
    }
}
