//! Model-free baselines built on word overlap. They make the whole pipeline
//! runnable offline and give tests a backend with real prompt sensitivity.

use std::collections::HashSet;

use crate::corpus::{LanguageTag, TextGenerator, Translator};
use crate::error::Result;
use crate::filtergate::{EntailmentModel, Judge};
use crate::probe::{Capabilities, ProbeBackend, TokenDistribution, TokenProb};

fn words(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| w.chars().count() >= 3).map(str::to_lowercase).collect()
}

/// Fraction of `needle` words found in `haystack`.
fn coverage(needle: &HashSet<String>, haystack: &HashSet<String>) -> f64 {
    if needle.is_empty() {
        return 0.0;
    }
    needle.iter().filter(|w| haystack.contains(*w)).count() as f64 / needle.len() as f64
}

/// Extracts `(id, title, content)` from rendered `Document ID:` blocks.
pub fn parse_document_blocks(prompt: &str) -> Vec<(u8, String, String)> {
    let mut out = Vec::new();
    for chunk in prompt.split("Document ID: ").skip(1) {
        let digits: String = chunk.chars().take_while(char::is_ascii_digit).collect();
        let Ok(id) = digits.parse::<u8>() else { continue };
        let body = chunk.split("\n---\n").next().unwrap_or_default();
        let title = body
            .split_once("\nTitle: ")
            .map(|(_, rest)| rest.split("\nContent: ").next().unwrap_or_default().to_owned())
            .unwrap_or_default();
        let content = body.split_once("\nContent: ").map(|(_, c)| c.to_owned()).unwrap_or_default();
        out.push((id, title, content));
    }
    out
}

fn best_overlap(prompt: &str, statement: &str) -> Option<u8> {
    let s = words(statement);
    let mut best: Option<(u8, f64)> = None;
    for (id, title, content) in parse_document_blocks(prompt) {
        let score = coverage(&s, &words(&format!("{title} {content}")));
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((id, score));
        }
    }
    best.map(|(id, _)| id)
}

pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str, _source: &LanguageTag, _target: &LanguageTag) -> Result<String> {
        Ok(text.to_owned())
    }
}

/// Writes one statement per document: its first sentence, cited by id.
pub struct LeadGenerator;

impl TextGenerator for LeadGenerator {
    fn generate(&self, prompt: &str) -> Result<String> {
        let parts: Vec<String> = parse_document_blocks(prompt)
            .into_iter()
            .filter_map(|(id, _, content)| {
                let first = content.split_inclusive(['.', '!', '?']).next()?.trim().to_owned();
                (!first.is_empty()).then(|| format!("{first} [{id}]"))
            })
            .collect();
        Ok(parts.join(" "))
    }
}

/// Picks the document with the highest word coverage of the cited sentence.
pub struct LexicalJudge {
    pub id: String,
}

impl Judge for LexicalJudge {
    fn judge_id(&self) -> &str {
        &self.id
    }

    fn reply(&self, prompt: &str) -> Result<String> {
        let statement = prompt
            .rsplit_once("Cited sentence: ")
            .map(|(_, rest)| rest.trim_end_matches("\nResponse:"))
            .unwrap_or_default();
        Ok(best_overlap(prompt, statement).map(|id| id.to_string()).unwrap_or_default())
    }
}

/// Entailed when at least `threshold` of the hypothesis words occur in the premise.
pub struct LexicalNli {
    pub threshold: f64,
}

impl Default for LexicalNli {
    fn default() -> Self {
        LexicalNli { threshold: 0.5 }
    }
}

impl EntailmentModel for LexicalNli {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        Ok(coverage(&words(hypothesis), &words(premise)) >= self.threshold)
    }
}

const LEXICAL_VOCAB: [&str; 13] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "The", "]", " "];
const FORMAT_LOGIT: f64 = 3.0;
const OVERLAP_SCALE: f64 = 8.0;

/// Deterministic probe backend scoring each document by word overlap with
/// the statement. Intermediate layers scale the overlap evidence down, so
/// early layers read out a non-citation token.
pub struct LexicalBackend {
    layers: usize,
}

impl Default for LexicalBackend {
    fn default() -> Self {
        LexicalBackend { layers: 8 }
    }
}

impl LexicalBackend {
    pub fn with_layers(layers: usize) -> Self {
        LexicalBackend { layers: layers.max(1) }
    }

    fn logits(&self, prompt: &str, depth: f64) -> Vec<f64> {
        let mut logits = vec![-4.0; LEXICAL_VOCAB.len()];
        logits[10] = FORMAT_LOGIT;
        if let Some((_, rest)) = prompt.rsplit_once("Response: ") {
            let statement = rest.strip_suffix(" [").unwrap_or(rest);
            let s = words(statement);
            for (id, title, content) in parse_document_blocks(prompt) {
                if (1..=9).contains(&id) {
                    let score = coverage(&s, &words(&format!("{title} {content}")));
                    logits[usize::from(id)] = FORMAT_LOGIT - 2.0 + OVERLAP_SCALE * score * depth;
                }
            }
        }
        logits
    }

    fn distribution(&self, prompt: &str, depth: f64) -> TokenDistribution {
        let logits = self.logits(prompt, depth);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        TokenDistribution {
            entries: exp
                .iter()
                .enumerate()
                .map(|(i, e)| TokenProb { id: i as u32, token: LEXICAL_VOCAB[i].to_owned(), prob: e / z })
                .collect(),
            vocab_size: LEXICAL_VOCAB.len(),
        }
    }
}

impl ProbeBackend for LexicalBackend {
    fn model_id(&self) -> &str {
        "lexical"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { layer_trace: true, sequence_logprob: true, tokenizer: true }
    }

    fn layer_count(&self) -> Option<usize> {
        Some(self.layers)
    }

    fn max_in_flight(&self) -> usize {
        8
    }

    fn count_tokens(&self, text: &str) -> Result<usize> {
        Ok(if LEXICAL_VOCAB.contains(&text) { 1 } else { text.chars().count() })
    }

    fn next_token(&self, prompt: &str) -> Result<TokenDistribution> {
        Ok(self.distribution(prompt, 1.0))
    }

    fn layer_trace(&self, prompt: &str) -> Result<Vec<String>> {
        Ok((1..=self.layers)
            .map(|l| {
                let d = self.distribution(prompt, l as f64 / self.layers as f64);
                d.argmax().expect("non-empty").token.clone()
            })
            .collect())
    }

    fn sequence_logprob(&self, prompt: &str, continuation: &str) -> Result<f64> {
        let s = words(continuation);
        let context: String = parse_document_blocks(prompt).into_iter().map(|(_, t, c)| format!("{t} {c} ")).collect();
        let ctx = words(&context);
        let covered = s.iter().filter(|w| ctx.contains(*w)).count() as f64;
        Ok(((covered + 0.5) / (s.len() as f64 + 1.0)).ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROMPT: &str = "Information:\nDocument ID: 1\nTitle: Cats\nContent: Cats purr when content.\n---\nDocument ID: 2\nTitle: Water\nContent: Water boils at one hundred degrees.\nSecond line.\n---\nUsing the above information ...\n\nResponse: Water boils at one hundred degrees. [";

    #[test]
    fn blocks_parse() {
        let blocks = parse_document_blocks(PROMPT);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[1].0, 2);
        assert_eq!(blocks[1].1, "Water");
        assert_eq!(blocks[1].2, "Water boils at one hundred degrees.\nSecond line.");
    }

    #[test]
    fn backend_prefers_overlapping_doc() {
        let b = LexicalBackend::default();
        let d = b.next_token(PROMPT).unwrap();
        d.validate().unwrap();
        assert_eq!(d.argmax().unwrap().token, "2");
        let trace = b.layer_trace(PROMPT).unwrap();
        assert_eq!(trace.len(), 8);
        assert_eq!(trace[0], "The");
        assert_eq!(trace.last().unwrap(), "2");
    }

    #[test]
    fn judge_nli_and_generator() {
        let judge = LexicalJudge { id: "j".into() };
        let prompt = "Instruction: x\n\nQuery: q\nInformation:\nDocument ID: 1\nTitle: Cats\nContent: Cats purr.\n---\nDocument ID: 2\nTitle: Dogs\nContent: Dogs bark loudly.\n---\n\nCited sentence: Dogs bark.\nResponse:";
        assert_eq!(judge.reply(prompt).unwrap(), "2");
        assert!(LexicalNli::default().entails("Dogs bark loudly.", "Dogs bark.").unwrap());
        assert!(!LexicalNli::default().entails("Cats purr.", "Dogs bark.").unwrap());
        let report = LeadGenerator.generate(PROMPT).unwrap();
        assert_eq!(report, "Cats purr when content. [1] Water boils at one hundred degrees. [2]");
    }

    #[test]
    fn more_context_means_higher_logprob() {
        let b = LexicalBackend::default();
        let full = b.sequence_logprob(PROMPT, "Water boils at one hundred degrees.").unwrap();
        let masked = b
            .sequence_logprob(
                "Document ID: 1\nTitle: Cats\nContent: Cats purr.\n---\n",
                "Water boils at one hundred degrees.",
            )
            .unwrap();
        assert!(full > masked);
        assert!(full < 0.0);
    }
}
