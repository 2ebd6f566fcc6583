use serde::{Deserialize, Serialize};

use super::{Statement, MAX_DOCS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MultiCitation,
    Uncited,
    InvalidId,
    /// A marker with no statement text in front of it.
    EmptyText,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedSpan {
    /// Number of retained statements that precede this span in the report.
    pub position: usize,
    /// Raw span text, markers included.
    pub text: String,
    pub reason: DropReason,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub statements: Vec<Statement>,
    pub dropped: Vec<DroppedSpan>,
}

impl Segmentation {
    pub fn count(&self, reason: DropReason) -> usize {
        self.dropped.iter().filter(|d| d.reason == reason).count()
    }

    /// Re-assembles the report from statements and dropped spans in their
    /// original order.
    pub fn reconstruct(&self) -> String {
        let mut out = String::new();
        let mut dropped = self.dropped.iter().peekable();
        for (i, st) in self.statements.iter().enumerate() {
            while let Some(d) = dropped.next_if(|d| d.position == i) {
                out.push_str(&d.text);
                out.push(' ');
            }
            out.push_str(&st.text);
            out.push_str(&format!(" [{}] ", st.citation_id));
        }
        for d in dropped {
            out.push_str(&d.text);
            out.push(' ');
        }
        out
    }
}

/// Finds the next `[digits]` marker at or after `from`; returns (start, end, digits).
fn next_marker(s: &str, from: usize) -> Option<(usize, usize, &str)> {
    let bytes = s.as_bytes();
    let mut i = from;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let digits_end = bytes[i + 1..].iter().position(|b| !b.is_ascii_digit()).map_or(bytes.len(), |p| i + 1 + p);
            if digits_end > i + 1 && digits_end < bytes.len() && bytes[digits_end] == b']' {
                return Some((i, digits_end + 1, &s[i + 1..digits_end]));
            }
        }
        i += 1;
    }
    None
}

/// Splits a generated report at `[k]` citation markers.
///
/// Text between two marker runs becomes one statement when the run holds a
/// single marker with `k` in `1..=k_docs`. Multi-citation runs, uncited
/// trailing text and out-of-range ids are reported in `dropped`.
pub fn segment_report(raw_report: &str, k_docs: usize) -> Result<Segmentation> {
    segment_with(raw_report, k_docs, false)
}

/// Like [`segment_report`] but tolerates sentence punctuation placed after
/// the marker (`"Claim [2]. Next"`), moving it in front of the marker.
pub fn segment_report_tolerant(raw_report: &str, k_docs: usize) -> Result<Segmentation> {
    segment_with(raw_report, k_docs, true)
}

fn segment_with(raw: &str, k_docs: usize, tolerant: bool) -> Result<Segmentation> {
    if !(1..=MAX_DOCS).contains(&k_docs) {
        return Err(Error::domain(format!("K must be in 1..={MAX_DOCS}, got {k_docs}")));
    }
    let mut seg = Segmentation::default();
    let mut pos = 0;
    let mut carry = String::new();

    while let Some((start, mut end, first)) = next_marker(raw, pos) {
        let mut ids = vec![first];
        // Extend the run over markers separated only by whitespace.
        loop {
            let rest = &raw[end..];
            let skipped = rest.len() - rest.trim_start().len();
            match next_marker(raw, end + skipped) {
                Some((s, e, d)) if s == end + skipped => {
                    ids.push(d);
                    end = e;
                }
                _ => break,
            }
        }

        let mut text = raw[pos..start].trim().to_owned();
        if tolerant && !carry.is_empty() {
            text = text.trim_start_matches(|c: char| ".,;:!?".contains(c)).trim().to_owned();
        }
        let span_text = raw[pos..end].trim().to_owned();
        let position = seg.statements.len();

        let single = (ids.len() == 1).then(|| ids[0].parse::<usize>().ok()).flatten();
        let reason = match single {
            _ if ids.len() > 1 => Some(DropReason::MultiCitation),
            Some(k) if (1..=k_docs).contains(&k) && ids[0].len() == 1 => None,
            _ => Some(DropReason::InvalidId),
        };
        let reason = reason.or_else(|| text.is_empty().then_some(DropReason::EmptyText));

        pos = end;
        carry.clear();
        if tolerant {
            let rest = &raw[pos..];
            let punct: String = rest.trim_start().chars().take_while(|c| ".!?".contains(*c)).collect();
            if !punct.is_empty() && reason.is_none() {
                text.push_str(&punct);
            }
            carry = punct;
        }

        match reason {
            None => seg.statements.push(Statement {
                index: position + 1,
                text,
                citation_id: ids[0].parse().expect("validated digit"),
                verified: false,
            }),
            Some(reason) => seg.dropped.push(DroppedSpan { position, text: span_text, reason }),
        }
    }

    let mut tail = raw[pos..].trim();
    if tolerant && !carry.is_empty() {
        tail = tail.trim_start_matches(|c: char| ".!?".contains(c)).trim();
    }
    if !tail.is_empty() {
        seg.dropped.push(DroppedSpan {
            position: seg.statements.len(),
            text: tail.to_owned(),
            reason: DropReason::Uncited,
        });
    }
    Ok(seg)
}
