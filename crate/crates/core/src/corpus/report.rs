use super::prompt::render_report_prompt;
use super::segment::segment_report;
use super::{DocumentSet, Query, Report};
use crate::error::{with_retries, Error, Result};

/// Free-form text generation behind an adapter (report writer, judges).
pub trait TextGenerator: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<String>;
}

/// Prompts `generator` with the report template over `docs` and segments its
/// output into single-citation statements.
///
/// The report is written in the language of the documents. A reply with no
/// usable statements is kept with an empty statement list.
pub fn generate_reference_report(
    query: &Query,
    docs: &DocumentSet,
    generator: &dyn TextGenerator,
    total_words: usize,
    retries: usize,
) -> Result<Report> {
    if query.id != docs.query_id() {
        return Err(Error::domain(format!("query {} does not match document set {}", query.id, docs.query_id())));
    }
    let language = docs.docs()[0].language.clone();
    if docs.docs().iter().any(|d| d.language != language) {
        return Err(Error::domain("report generation needs a single-language document set"));
    }
    let prompt = render_report_prompt(query, docs, total_words, &language);
    let raw = with_retries(retries, || generator.generate(&prompt))?;
    let seg = segment_report(&raw, docs.len())?;
    if seg.statements.is_empty() {
        log::warn!("report for query {} has no single-citation statements", query.id);
    }
    Ok(Report { query_id: query.id.clone(), language, raw_text: raw, statements: seg.statements, dropped: seg.dropped })
}
