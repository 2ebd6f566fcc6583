//! Model probe contract and probing operations.
//!
//! A [`ProbeBackend`] answers next-token distributions (required) and,
//! optionally, per-layer logit-lens readouts and continuation
//! log-probabilities. [`Prober`] wraps a backend with retries and the
//! on-disk result cache.

mod cache;
pub mod wire;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::contextlab::{ContextVariant, PositionLabel, PromptBundle};
use crate::error::{with_retries, Error, Result};

pub use cache::{CacheKey, CachedValue, ProbeCache};

/// Tolerance on the total mass of a full next-token distribution.
pub const MASS_TOLERANCE: f64 = 1e-4;

/// Clamp applied to probabilities before the logit transform.
pub const LOGIT_CLAMP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenProb {
    pub id: u32,
    pub token: String,
    pub prob: f64,
}

/// Next-token probabilities. When `entries.len() == vocab_size` the
/// distribution is full and must sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub entries: Vec<TokenProb>,
    pub vocab_size: usize,
}

impl TokenDistribution {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidOutput("empty next-token distribution".into()));
        }
        if self.entries.len() > self.vocab_size {
            return Err(Error::InvalidOutput(format!(
                "{} entries exceed vocabulary size {}",
                self.entries.len(),
                self.vocab_size
            )));
        }
        if let Some(bad) = self.entries.iter().find(|e| !(e.prob.is_finite() && e.prob >= 0.0)) {
            return Err(Error::InvalidOutput(format!("bad probability {} for {:?}", bad.prob, bad.token)));
        }
        let mass: f64 = self.entries.iter().map(|e| e.prob).sum();
        if self.is_full() && (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidOutput(format!("distribution mass {mass} is not 1")));
        }
        if mass > 1.0 + MASS_TOLERANCE {
            return Err(Error::InvalidOutput(format!("distribution mass {mass} exceeds 1")));
        }
        Ok(())
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.vocab_size
    }

    /// Highest-probability entry; ties go to the smallest token id.
    pub fn argmax(&self) -> Option<&TokenProb> {
        self.entries.iter().reduce(
            |best, e| {
                if e.prob > best.prob || (e.prob == best.prob && e.id < best.id) {
                    e
                } else {
                    best
                }
            },
        )
    }

    /// Probability of the token whose text is exactly `token`.
    pub fn prob_of(&self, token: &str) -> f64 {
        self.entries.iter().find(|e| e.token == token).map_or(0.0, |e| e.prob)
    }

    /// Shannon entropy in nats over the supplied entries.
    pub fn entropy(&self) -> f64 {
        let h: f64 = self.entries.iter().filter(|e| e.prob > 0.0).map(|e| -e.prob * e.prob.ln()).sum();
        h.max(0.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub layer_trace: bool,
    pub sequence_logprob: bool,
    pub tokenizer: bool,
}

/// A language model that can be probed deterministically.
///
/// Identical prompt bytes must always produce identical responses.
pub trait ProbeBackend: Send + Sync {
    fn model_id(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    /// Number of layers reported by [`ProbeBackend::layer_trace`].
    fn layer_count(&self) -> Option<usize> {
        None
    }

    /// Maximum concurrent requests the backend accepts.
    fn max_in_flight(&self) -> usize {
        1
    }

    fn count_tokens(&self, _text: &str) -> Result<usize> {
        Err(capability(self.model_id(), "tokenizer"))
    }

    fn next_token(&self, prompt: &str) -> Result<TokenDistribution>;

    /// Argmax token string per layer, read through the final norm and unembedding.
    fn layer_trace(&self, _prompt: &str) -> Result<Vec<String>> {
        Err(capability(self.model_id(), "layer_trace"))
    }

    /// Natural-log probability of generating `continuation` after `prompt`.
    fn sequence_logprob(&self, _prompt: &str, _continuation: &str) -> Result<f64> {
        Err(capability(self.model_id(), "sequence_logprob"))
    }
}

pub(crate) fn capability(model_id: &str, capability: &'static str) -> Error {
    Error::Capability { model_id: model_id.to_owned(), capability }
}

/// Identifies one probed (statement, variant) cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PredictionKey {
    pub query_id: String,
    pub statement_index: usize,
    pub variant: ContextVariant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CitationPrediction {
    pub query_id: String,
    pub statement_index: usize,
    pub variant: ContextVariant,
    pub cited_id: u8,
    pub position: Option<PositionLabel>,
    pub top1_token: String,
    pub p_correct: f64,
    pub p_top1: f64,
    pub entropy: f64,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub query_id: String,
    pub statement_index: usize,
    pub variant: ContextVariant,
    pub cited_id: u8,
    pub per_layer_top1: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSample {
    pub mask: Vec<bool>,
    pub logit_prob: f64,
}

/// Backend plus cache and retry policy.
pub struct Prober<'a> {
    backend: &'a dyn ProbeBackend,
    cache: Option<&'a ProbeCache>,
    retries: usize,
    calls: AtomicUsize,
}

impl<'a> Prober<'a> {
    pub fn new(backend: &'a dyn ProbeBackend, cache: Option<&'a ProbeCache>, retries: usize) -> Self {
        Prober { backend, cache, retries, calls: AtomicUsize::new(0) }
    }

    pub fn backend(&self) -> &dyn ProbeBackend {
        self.backend
    }

    /// Backend requests issued so far (cache hits excluded).
    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn cached<T>(
        &self,
        key: CacheKey,
        call: impl Fn() -> Result<T>,
        wrap: impl Fn(&T) -> CachedValue,
        unwrap: impl Fn(CachedValue) -> Option<T>,
    ) -> Result<T> {
        if let Some(cache) = self.cache {
            if let Some(hit) = cache.get(&key).and_then(&unwrap) {
                return Ok(hit);
            }
        }
        let value = with_retries(self.retries, || {
            self.calls.fetch_add(1, Ordering::SeqCst);
            call()
        })?;
        if let Some(cache) = self.cache {
            cache.put(&key, &wrap(&value))?;
        }
        Ok(value)
    }

    pub fn next_token(&self, prompt: &str) -> Result<TokenDistribution> {
        let key = CacheKey::new(self.backend.model_id(), "next_token", prompt.as_bytes(), &[]);
        let dist = self.cached(
            key,
            || self.backend.next_token(prompt),
            |d| CachedValue::Distribution(d.clone()),
            |v| match v {
                CachedValue::Distribution(d) => Some(d),
                _ => None,
            },
        )?;
        dist.validate()?;
        Ok(dist)
    }

    pub fn layer_trace(&self, prompt: &str) -> Result<Vec<String>> {
        if !self.backend.capabilities().layer_trace {
            return Err(capability(self.backend.model_id(), "layer_trace"));
        }
        let key = CacheKey::new(self.backend.model_id(), "layer_trace", prompt.as_bytes(), &[]);
        self.cached(
            key,
            || self.backend.layer_trace(prompt),
            |t| CachedValue::Trace(t.clone()),
            |v| match v {
                CachedValue::Trace(t) => Some(t),
                _ => None,
            },
        )
    }

    pub fn sequence_logprob(&self, prompt: &str, continuation: &str, mask: &[bool]) -> Result<f64> {
        if !self.backend.capabilities().sequence_logprob {
            return Err(capability(self.backend.model_id(), "sequence_logprob"));
        }
        let mut bytes = prompt.as_bytes().to_vec();
        bytes.push(0);
        bytes.extend_from_slice(continuation.as_bytes());
        let mask_bytes: Vec<u8> = mask.iter().map(|&b| u8::from(b)).collect();
        let key = CacheKey::new(self.backend.model_id(), "sequence_logprob", &bytes, &mask_bytes);
        self.cached(
            key,
            || self.backend.sequence_logprob(prompt, continuation),
            |p| CachedValue::LogProb(*p),
            |v| match v {
                CachedValue::LogProb(p) => Some(p),
                _ => None,
            },
        )
    }
}

/// True iff every citation id `1..=k_docs` is a single token for the backend.
pub fn check_single_token_ids(backend: &dyn ProbeBackend, k_docs: usize) -> Result<bool> {
    if !backend.capabilities().tokenizer {
        return Err(capability(backend.model_id(), "tokenizer"));
    }
    for id in 1..=k_docs {
        if backend.count_tokens(&id.to_string())? != 1 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Reads the next-token distribution after the prompt's opening bracket.
///
/// The top token is the argmax over the whole distribution, so a non-digit
/// winner makes the prediction incorrect.
pub fn next_citation_distribution(
    prober: &Prober<'_>,
    bundle: &PromptBundle,
    cited_id: u8,
    key: &PredictionKey,
    position: Option<PositionLabel>,
) -> Result<CitationPrediction> {
    if !bundle.prefix.ends_with('[') {
        return Err(Error::domain("probe prefix must end with an opening bracket"));
    }
    let dist = prober.next_token(&bundle.full_text())?;
    let top = dist.argmax().expect("validated distribution is non-empty");
    let correct_token = cited_id.to_string();
    Ok(CitationPrediction {
        query_id: key.query_id.clone(),
        statement_index: key.statement_index,
        variant: key.variant.clone(),
        cited_id,
        position,
        top1_token: top.token.clone(),
        p_correct: dist.prob_of(&correct_token),
        p_top1: top.prob,
        entropy: dist.entropy(),
        correct: top.token == correct_token,
    })
}

/// Per-layer argmax tokens at the prompt's last position.
pub fn layer_trace(
    prober: &Prober<'_>,
    bundle: &PromptBundle,
    cited_id: u8,
    key: &PredictionKey,
) -> Result<LayerTrace> {
    let trace = prober.layer_trace(&bundle.full_text())?;
    if let Some(n) = prober.backend().layer_count() {
        if trace.len() != n {
            return Err(Error::InvalidOutput(format!("trace has {} layers, backend reports {n}", trace.len())));
        }
    }
    if trace.is_empty() {
        return Err(Error::InvalidOutput("empty layer trace".into()));
    }
    Ok(LayerTrace {
        query_id: key.query_id.clone(),
        statement_index: key.statement_index,
        variant: key.variant.clone(),
        cited_id,
        per_layer_top1: trace,
    })
}

/// `ln(p / (1 - p))` with `p` clamped to `[1e-9, 1 - 1e-9]`.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
    (p / (1.0 - p)).ln()
}

/// Logit-scaled probability of the statement given a masked context prompt.
pub fn ablation_logit_prob(prober: &Prober<'_>, masked_prompt: &str, statement: &str, mask: &[bool]) -> Result<f64> {
    let logprob = prober.sequence_logprob(masked_prompt, statement, mask)?;
    if logprob.is_nan() || logprob > 1e-12 {
        return Err(Error::InvalidOutput(format!("invalid log-probability {logprob}")));
    }
    Ok(logit(logprob.exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguageTag;

    pub(crate) struct Fixed {
        pub dist: TokenDistribution,
        pub calls: AtomicUsize,
    }

    impl ProbeBackend for Fixed {
        fn model_id(&self) -> &str {
            "fixed"
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities { layer_trace: true, sequence_logprob: true, tokenizer: true }
        }
        fn layer_count(&self) -> Option<usize> {
            Some(4)
        }
        fn count_tokens(&self, text: &str) -> Result<usize> {
            Ok(if text == "9" { 2 } else { 1 })
        }
        fn next_token(&self, _: &str) -> Result<TokenDistribution> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.dist.clone())
        }
        fn layer_trace(&self, _: &str) -> Result<Vec<String>> {
            Ok(vec!["x".into(), "x".into(), "2".into(), "2".into()])
        }
        fn sequence_logprob(&self, prompt: &str, _: &str) -> Result<f64> {
            Ok(prompt.parse::<f64>().unwrap().ln())
        }
    }

    fn digits(probs: &[f64]) -> TokenDistribution {
        TokenDistribution {
            entries: probs
                .iter()
                .enumerate()
                .map(|(i, p)| TokenProb { id: i as u32 + 1, token: (i + 1).to_string(), prob: *p })
                .collect(),
            vocab_size: probs.len(),
        }
    }

    fn bundle() -> PromptBundle {
        PromptBundle {
            context_text: "ctx".into(),
            prefix: "Response: s [".into(),
            citation_token_candidates: vec![],
            doc_spans: vec![],
        }
    }

    fn key() -> PredictionKey {
        PredictionKey { query_id: "q".into(), statement_index: 1, variant: ContextVariant::cited_in(LanguageTag::en()) }
    }

    fn backend(dist: TokenDistribution) -> Fixed {
        Fixed { dist, calls: AtomicUsize::new(0) }
    }

    #[test]
    fn one_hot_prediction() {
        let b = backend(digits(&[0.0, 1.0, 0.0]));
        let p = next_citation_distribution(&Prober::new(&b, None, 0), &bundle(), 2, &key(), None).unwrap();
        assert!(p.correct);
        assert_eq!(p.p_correct, 1.0);
        assert_eq!(p.entropy, 0.0);
    }

    #[test]
    fn uniform_over_nine() {
        let b = backend(digits(&[1.0 / 9.0; 9]));
        let p = next_citation_distribution(&Prober::new(&b, None, 0), &bundle(), 5, &key(), None).unwrap();
        assert!((p.p_correct - 1.0 / 9.0).abs() < 1e-15);
        assert!((p.entropy - 9f64.ln()).abs() < 1e-12);
        // Tie breaks to the smallest id.
        assert_eq!(p.top1_token, "1");
        assert!(!p.correct);
    }

    #[test]
    fn non_digit_argmax_is_incorrect() {
        let mut d = digits(&[0.1, 0.3, 0.1]);
        d.entries.push(TokenProb { id: 100, token: "The".into(), prob: 0.5 });
        d.vocab_size = 4;
        let b = backend(d);
        let p = next_citation_distribution(&Prober::new(&b, None, 0), &bundle(), 2, &key(), None).unwrap();
        assert_eq!(p.top1_token, "The");
        assert!(!p.correct);
        assert_eq!(p.p_correct, 0.3);
        assert!(p.p_correct <= p.p_top1);
    }

    #[test]
    fn prefix_must_end_with_bracket() {
        let b = backend(digits(&[1.0]));
        let mut bad = bundle();
        bad.prefix.push(' ');
        assert!(next_citation_distribution(&Prober::new(&b, None, 0), &bad, 1, &key(), None).is_err());
    }

    #[test]
    fn invalid_distributions_are_rejected() {
        assert!(digits(&[0.5, 0.4]).validate().is_err());
        assert!(digits(&[1.0, -0.0001]).validate().is_err());
        let partial = TokenDistribution { vocab_size: 10, ..digits(&[0.5, 0.4]) };
        assert!(partial.validate().is_ok());
    }

    #[test]
    fn single_token_check() {
        let b = backend(digits(&[1.0]));
        assert!(check_single_token_ids(&b, 8).unwrap());
        assert!(!check_single_token_ids(&b, 9).unwrap());
        assert!(check_single_token_ids(&b, 1).unwrap());
    }

    struct NextOnly;
    impl ProbeBackend for NextOnly {
        fn model_id(&self) -> &str {
            "bare"
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities::default()
        }
        fn next_token(&self, _: &str) -> Result<TokenDistribution> {
            Ok(digits(&[1.0]))
        }
    }

    #[test]
    fn missing_capabilities() {
        assert!(matches!(check_single_token_ids(&NextOnly, 3), Err(Error::Capability { .. })));
        let prober = Prober::new(&NextOnly, None, 0);
        assert!(matches!(layer_trace(&prober, &bundle(), 1, &key()), Err(Error::Capability { .. })));
        assert!(matches!(ablation_logit_prob(&prober, "0.5", "s", &[true]), Err(Error::Capability { .. })));
    }

    #[test]
    fn trace_passthrough() {
        let b = backend(digits(&[1.0]));
        let t = layer_trace(&Prober::new(&b, None, 0), &bundle(), 2, &key()).unwrap();
        assert_eq!(t.per_layer_top1, vec!["x", "x", "2", "2"]);
    }

    #[test]
    fn logit_values() {
        let b = backend(digits(&[1.0]));
        let prober = Prober::new(&b, None, 0);
        assert!(ablation_logit_prob(&prober, "0.5", "s", &[true]).unwrap().abs() < 1e-12);
        assert!((ablation_logit_prob(&prober, "0.9", "s", &[true]).unwrap() - 9f64.ln()).abs() < 1e-12);
        assert_eq!(logit(0.0), logit(LOGIT_CLAMP));
        assert!(logit(1.0).is_finite());
    }

    #[test]
    fn warm_cache_skips_backend() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ProbeCache::open(dir.path()).unwrap();
        let b = backend(digits(&[0.25, 0.75]));
        let cold = Prober::new(&b, Some(&cache), 0);
        let first = next_citation_distribution(&cold, &bundle(), 2, &key(), None).unwrap();
        assert_eq!(cold.backend_calls(), 1);
        let warm = Prober::new(&b, Some(&cache), 0);
        let second = next_citation_distribution(&warm, &bundle(), 2, &key(), None).unwrap();
        assert_eq!(warm.backend_calls(), 0);
        assert_eq!(b.calls.load(Ordering::SeqCst), 1);
        assert_eq!(first, second);
    }
}
