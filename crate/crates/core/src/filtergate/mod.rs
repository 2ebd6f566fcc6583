//! Two-stage statement verification: majority-vote relevance judging
//! followed by an entailment gate, with retain-rate accounting.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    normalize_field, render_document_blocks, DocumentSet, DropReason, EvidenceDocument, LanguageTag, Query, Report,
    Statement,
};
use crate::error::{with_retries, Error, Result};

/// Votes needed for a statement to pass the judge stage.
pub const MAJORITY: usize = 2;

/// A relevance judge: shown all documents, replies with the id of the one
/// that best supports the statement.
pub trait Judge: Send + Sync {
    fn judge_id(&self) -> &str;
    fn reply(&self, prompt: &str) -> Result<String>;
}

/// Binary entailment classifier: does `premise` entail `hypothesis`?
pub trait EntailmentModel: Send + Sync {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool>;
}

/// Three-way NLI label; only `Entailment` counts as support.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub fn parse(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "entailment" | "entail" | "entailed" => Some(NliLabel::Entailment),
            "neutral" => Some(NliLabel::Neutral),
            "contradiction" | "contradict" => Some(NliLabel::Contradiction),
            _ => None,
        }
    }

    pub fn is_entailment(self) -> bool {
        self == NliLabel::Entailment
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub judge_id: String,
    pub statement_index: usize,
    /// `None` when the reply did not name a valid document.
    pub selected_doc_id: Option<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Kept,
    JudgeMinority,
    NliFail,
    SkippedMulticite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub query_id: String,
    pub language: LanguageTag,
    /// Statement index within its report; 0 for skipped multi-citation spans.
    pub statement_index: usize,
    pub votes: usize,
    pub entailed: bool,
    pub retained: bool,
    pub reason: FilterReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub total: usize,
    pub judge_retained: usize,
    pub nli_retained: usize,
    pub judge_retain_rate: f64,
    /// Denominator is `judge_retained`: the stages run in sequence.
    pub nli_retain_rate: f64,
    pub pool_size: usize,
}

/// A verified statement together with the report it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub query_id: String,
    pub language: LanguageTag,
    pub statement: Statement,
}

pub struct PoolInput<'a> {
    pub report: &'a Report,
    pub query: &'a Query,
    pub docs: &'a DocumentSet,
}

/// Judge prompt: query, all documents, and the cited sentence.
pub fn render_judge_prompt(query: &Query, docs: &DocumentSet, statement: &str) -> String {
    let (blocks, _) =
        render_document_blocks(docs.docs().iter().map(|d| (d.doc_id, d.title.as_str(), d.content.as_str())));
    format!(
        "Instruction: You are given a query, a document, and a sentence from a generated response that cites the document in answering the query. Determine which document best supports the information in the cited sentence. Respond only with the exact document ID. Do not provide any additional explanation.\n\
\n\
Query: {query}\n\
Information:\n\
{blocks}\n\
Cited sentence: {statement}\n\
Response:",
        query = normalize_field(&query.text),
        statement = normalize_field(statement),
    )
}

/// First standalone run of ASCII digits in `reply`, accepted only if it
/// names a document in `1..=k_docs`.
pub fn parse_judge_reply(reply: &str, k_docs: usize) -> Option<u8> {
    let token =
        reply.split(|c: char| !c.is_alphanumeric()).find(|t| !t.is_empty() && t.chars().all(|c| c.is_ascii_digit()))?;
    let id: usize = token.parse().ok()?;
    (1..=k_docs).contains(&id).then_some(id as u8)
}

/// Number of judges whose selection equals the cited id.
pub fn tally_votes(verdicts: &[JudgeVerdict], cited_id: u8) -> Result<usize> {
    let mut seen = HashSet::new();
    for v in verdicts {
        if !seen.insert(v.judge_id.as_str()) {
            return Err(Error::Config(format!("duplicate judge id {:?}", v.judge_id)));
        }
    }
    Ok(verdicts.iter().filter(|v| v.selected_doc_id == Some(cited_id)).count())
}

#[derive(Clone, Debug, PartialEq)]
pub struct JudgeOutcome {
    pub votes: usize,
    pub pass: bool,
    pub verdicts: Vec<JudgeVerdict>,
}

/// Asks every judge for the best-supporting document and counts agreement
/// with the statement's citation. Judges that keep failing, or reply with
/// something other than a valid id, count as non-matching votes.
pub fn judge_filter(
    statement: &Statement,
    query: &Query,
    docs: &DocumentSet,
    judges: &[Box<dyn Judge>],
    retries: usize,
) -> Result<JudgeOutcome> {
    let prompt = render_judge_prompt(query, docs, &statement.text);
    let verdicts: Vec<JudgeVerdict> = judges
        .par_iter()
        .map(|judge| {
            let selected = match with_retries(retries, || judge.reply(&prompt)) {
                Ok(reply) => {
                    let parsed = parse_judge_reply(&reply, docs.len());
                    if parsed.is_none() {
                        log::info!(
                            "judge {} gave unusable reply {:?} for {}#{}",
                            judge.judge_id(),
                            reply,
                            query.id,
                            statement.index
                        );
                    }
                    parsed
                }
                Err(e) => {
                    log::warn!("judge {} failed for {}#{}: {e}", judge.judge_id(), query.id, statement.index);
                    None
                }
            };
            JudgeVerdict {
                judge_id: judge.judge_id().to_owned(),
                statement_index: statement.index,
                selected_doc_id: selected,
            }
        })
        .collect();
    let votes = tally_votes(&verdicts, statement.citation_id)?;
    Ok(JudgeOutcome { votes, pass: votes >= MAJORITY, verdicts })
}

/// Entailment check with the cited document as premise and the statement as
/// hypothesis.
pub fn nli_filter(
    statement: &Statement,
    cited_doc: &EvidenceDocument,
    nli: &dyn EntailmentModel,
    retries: usize,
) -> Result<bool> {
    if cited_doc.doc_id != statement.citation_id {
        return Err(Error::domain(format!(
            "premise doc {} is not the cited doc {}",
            cited_doc.doc_id, statement.citation_id
        )));
    }
    with_retries(retries, || nli.entails(&cited_doc.content, &statement.text))
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn pool_stats(outcomes: &[FilterOutcome]) -> PoolStats {
    let considered = outcomes.iter().filter(|o| o.reason != FilterReason::SkippedMulticite);
    let (mut total, mut judge_retained, mut nli_retained) = (0, 0, 0);
    for o in considered {
        total += 1;
        if o.votes >= MAJORITY {
            judge_retained += 1;
            if o.entailed {
                nli_retained += 1;
            }
        }
    }
    PoolStats {
        total,
        judge_retained,
        nli_retained,
        judge_retain_rate: rate(judge_retained, total),
        nli_retain_rate: rate(nli_retained, judge_retained),
        pool_size: nli_retained,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatementPool {
    pub pool: Vec<PoolEntry>,
    pub stats: PoolStats,
    pub outcomes: Vec<FilterOutcome>,
}

/// Runs both filter stages over every single-citation statement.
///
/// The pool keeps input order (report order, then statement index).
/// Multi-citation spans dropped during segmentation appear in the outcomes
/// as `skipped_multicite` and are excluded from the rate denominators.
pub fn build_statement_pool(
    inputs: &[PoolInput<'_>],
    judges: &[Box<dyn Judge>],
    nli: &dyn EntailmentModel,
    retries: usize,
) -> Result<StatementPool> {
    let mut outcomes = Vec::new();
    let mut pool = Vec::new();
    for input in inputs {
        let report = input.report;
        if report.query_id != input.docs.query_id() || report.query_id != input.query.id {
            return Err(Error::domain(format!("report {} has no matching document set", report.query_id)));
        }
        let per_statement: Vec<Result<FilterOutcome>> = report
            .statements
            .par_iter()
            .map(|st| {
                let judged = judge_filter(st, input.query, input.docs, judges, retries)?;
                let (entailed, reason) = if !judged.pass {
                    (false, FilterReason::JudgeMinority)
                } else {
                    let cited = input
                        .docs
                        .get(st.citation_id)
                        .ok_or_else(|| Error::domain(format!("statement cites missing doc {}", st.citation_id)))?;
                    match nli_filter(st, cited, nli, retries) {
                        Ok(true) => (true, FilterReason::Kept),
                        Ok(false) => (false, FilterReason::NliFail),
                        Err(e) => {
                            log::warn!("entailment failed for {}#{}: {e}", report.query_id, st.index);
                            (false, FilterReason::NliFail)
                        }
                    }
                };
                Ok(FilterOutcome {
                    query_id: report.query_id.clone(),
                    language: report.language.clone(),
                    statement_index: st.index,
                    votes: judged.votes,
                    entailed,
                    retained: judged.pass && entailed,
                    reason,
                })
            })
            .collect();
        for (st, outcome) in report.statements.iter().zip(per_statement) {
            let outcome = outcome?;
            if outcome.retained {
                pool.push(PoolEntry {
                    query_id: report.query_id.clone(),
                    language: report.language.clone(),
                    statement: Statement { verified: true, ..st.clone() },
                });
            }
            outcomes.push(outcome);
        }
        for _ in report.dropped.iter().filter(|d| d.reason == DropReason::MultiCitation) {
            outcomes.push(FilterOutcome {
                query_id: report.query_id.clone(),
                language: report.language.clone(),
                statement_index: 0,
                votes: 0,
                entailed: false,
                retained: false,
                reason: FilterReason::SkippedMulticite,
            });
        }
    }
    let stats = pool_stats(&outcomes);
    Ok(StatementPool { pool, stats, outcomes })
}
