//! Shared document-block rendering and the report-generation prompt.

use super::{DocumentSet, LanguageTag, Query};

/// Word budget for generated reports when none is configured.
pub const DEFAULT_TOTAL_WORDS: usize = 200;

/// Normalizes line endings to `\n`, strips trailing whitespace on every line
/// and drops leading/trailing blank lines.
pub fn normalize_field(text: &str) -> String {
    let unified = text.replace("\r\n", "\n").replace('\r', "\n");
    let lines: Vec<&str> = unified.lines().map(str::trim_end).collect();
    lines.join("\n").trim_matches('\n').to_owned()
}

/// Renders `Document ID / Title / Content` blocks, each terminated by `---`.
///
/// Returns the text plus, per document, the byte range covering its title
/// and content values.
pub fn render_document_blocks<'a>(
    docs: impl IntoIterator<Item = (u8, &'a str, &'a str)>,
) -> (String, Vec<(u8, std::ops::Range<usize>)>) {
    let mut out = String::new();
    let mut spans = Vec::new();
    for (id, title, content) in docs {
        out.push_str(&format!("Document ID: {id}\nTitle: "));
        let start = out.len();
        out.push_str(&normalize_field(title));
        out.push_str("\nContent: ");
        out.push_str(&normalize_field(content));
        spans.push((id, start..out.len()));
        out.push_str("\n---\n");
    }
    (out, spans)
}

/// Prompt asking a strong generator for a citation-supported report.
pub fn render_report_prompt(query: &Query, docs: &DocumentSet, total_words: usize, language: &LanguageTag) -> String {
    let (blocks, _) =
        render_document_blocks(docs.docs().iter().map(|d| (d.doc_id, d.title.as_str(), d.content.as_str())));
    format!(
        "Information:\n{blocks}\
Using the above information, respond to the following query or task: {query}.\n\
The response should focus on the answer to the query, should be well structured, informative, and concise, with facts and numbers if available.\n\
\n\
Please follow all of the following guidelines in your response:\n\
- You MUST write in a single paragraph and at most {total_words} words.\n\
- You MUST write the response in the following language: {language}.\n\
- You MUST cite your sources, especially for relevant sentences that answer the question.\n\
- When using information that comes from the documents, use citation which refer to the Document ID at the end of the sentence (e.g., [1]).\n\
- Do NOT cite multiple documents at the end of the sentence (e.g., [1][2]).\n\
- If multiple documents support the sentence, only cite the most relevant document.\n\
- It is important to ensure that the Document ID is a valid string from the information above and that the information in the sentence is present in the document.\n\
\n\
Response:",
        query = normalize_field(&query.text),
        language = language.display_name(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EvidenceDocument, LanguageTag};

    #[test]
    fn normalization() {
        assert_eq!(normalize_field("a  \r\nb\t\r\n\r\n"), "a\nb");
        assert_eq!(normalize_field("\n x \n"), " x");
    }

    #[test]
    fn report_prompt_layout() {
        let docs = DocumentSet::new(
            "q",
            vec![
                EvidenceDocument {
                    doc_id: 1,
                    title: "T1".into(),
                    content: "C1".into(),
                    language: LanguageTag::en(),
                    relevant: true,
                },
                EvidenceDocument {
                    doc_id: 2,
                    title: "T2".into(),
                    content: "C2".into(),
                    language: LanguageTag::en(),
                    relevant: true,
                },
            ],
        )
        .unwrap();
        let q = Query::new("q", "Why is the sky blue?", LanguageTag::en()).unwrap();
        let p = render_report_prompt(&q, &docs, 200, &LanguageTag::en());
        assert!(p.starts_with(
            "Information:\nDocument ID: 1\nTitle: T1\nContent: C1\n---\nDocument ID: 2\nTitle: T2\nContent: C2\n---\nUsing the above information, respond to the following query or task: Why is the sky blue?.\n"
        ));
        assert!(p.contains("- You MUST write in a single paragraph and at most 200 words.\n"));
        assert!(p.contains("in the following language: English.\n"));
        assert!(p.contains("- Do NOT cite multiple documents at the end of the sentence (e.g., [1][2]).\n"));
        assert!(p.ends_with("present in the document.\n\nResponse:"));
    }
}
