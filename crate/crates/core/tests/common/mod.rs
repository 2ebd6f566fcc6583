//! Helpers shared by the integration test targets: scripted adapters,
//! synthetic datasets and independently coded statistical oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use langpref::adapters::parse_document_blocks;
use langpref::corpus::{LanguageTag, Translator};
use langpref::probe::{Capabilities, ProbeBackend, TokenDistribution, TokenProb};
use langpref::runner::{statement_seed, Experiment, ExperimentConfig, Runner};
use langpref::Result;


/// Prefixes every translated field with `(<lang>) ` so a backend can tell
/// which documents were swapped.
pub struct TaggingTranslator;

impl Translator for TaggingTranslator {
    fn translate(&self, text: &str, _source: &LanguageTag, target: &LanguageTag) -> Result<String> {
        Ok(format!("({target}) {text}"))
    }
}

/// Splits `(xx) body` into `("xx", body)`; untagged text is English.
pub fn strip_tag(text: &str) -> (String, &str) {
    if let Some(rest) = text.strip_prefix('(') {
        if let Some((lang, body)) = rest.split_once(") ") {
            if !lang.is_empty() && lang.len() <= 8 && lang.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
                return (lang.to_owned(), body);
            }
        }
    }
    ("en".to_owned(), text)
}

const VOCAB: [&str; 10] = ["1", "2", "3", "4", "5", "6", "7", "8", "9", "The"];

/// Probe backend programmed with a correct-citation rate per language.
///
/// The cited document is the one whose content contains the statement; its
/// language comes from the tagging translator's prefix. Each statement gets
/// one uniform draw shared by every variant, and the prediction is correct
/// iff the draw falls below the rate of the cited document's language.
pub struct ScriptedBackend {
    pub rates: BTreeMap<String, f64>,
    pub seed: u64,
    pub layers: usize,
    pub calls: Arc<AtomicUsize>,
}

impl ScriptedBackend {
    pub fn new(rates: &[(&str, f64)], seed: u64) -> Self {
        ScriptedBackend {
            rates: rates.iter().map(|(l, a)| (l.to_string(), *a)).collect(),
            seed,
            layers: 6,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn counter(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.calls)
    }

    /// `(top token id text, k_docs)` for a probe prompt.
    fn decide(&self, prompt: &str) -> (String, usize) {
        let statement = prompt
            .rsplit_once("Response: ")
            .map(|(_, rest)| rest.strip_suffix(" [").unwrap_or(rest).to_owned())
            .unwrap_or_default();
        let docs = parse_document_blocks(prompt);
        let k = docs.len();
        let cited = docs.iter().find_map(|(id, _, content)| {
            let (lang, body) = strip_tag(content);
            body.contains(&statement).then_some((*id, lang))
        });
        let Some((cited, lang)) = cited else {
            return ("The".to_owned(), k);
        };
        let rate = self.rates.get(&lang).or_else(|| self.rates.get("en")).copied().unwrap_or(0.5);
        if unit_draw(self.seed, &statement) < rate || k < 2 {
            (cited.to_string(), k)
        } else {
            ((cited as usize % k + 1).to_string(), k)
        }
    }
}

/// Uniform value in `[0, 1)` derived from a seed and a key.
pub fn unit_draw(seed: u64, key: &str) -> f64 {
    (statement_seed(seed, key, 0) >> 11) as f64 / (1u64 << 53) as f64
}

impl ProbeBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        "scripted"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { layer_trace: true, sequence_logprob: false, tokenizer: true }
    }

    fn layer_count(&self) -> Option<usize> {
        Some(self.layers)
    }

    fn max_in_flight(&self) -> usize {
        4
    }

    fn count_tokens(&self, text: &str) -> Result<usize> {
        Ok(if VOCAB.contains(&text) { 1 } else { text.chars().count().max(1) })
    }

    fn next_token(&self, prompt: &str) -> Result<TokenDistribution> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let (top, _) = self.decide(prompt);
        let rest = 0.45 / (VOCAB.len() - 1) as f64;
        Ok(TokenDistribution {
            entries: VOCAB
                .iter()
                .enumerate()
                .map(|(i, t)| TokenProb {
                    id: i as u32,
                    token: t.to_string(),
                    prob: if *t == top { 0.55 } else { rest },
                })
                .collect(),
            vocab_size: VOCAB.len(),
        })
    }

    /// Early layers read a non-citation token, middle layers a wrong id and
    /// the last layer the final prediction.
    fn layer_trace(&self, prompt: &str) -> Result<Vec<String>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let (top, k) = self.decide(prompt);
        let wrong = match top.parse::<usize>() {
            Ok(id) if k >= 2 => (id % k + 1).to_string(),
            _ => "1".to_owned(),
        };
        Ok((0..self.layers)
            .map(|l| {
                if l + 1 == self.layers {
                    top.clone()
                } else if l < self.layers / 2 {
                    "The".to_owned()
                } else {
                    wrong.clone()
                }
            })
            .collect())
    }
}


/// Writes an eli5-format dataset whose documents share no content words
/// across ids, so lexical judges and entailment keep every lead statement.
pub fn synthetic_dataset(path: &Path, queries: usize, k_docs: usize) -> PathBuf {
    let mut out = String::new();
    for q in 1..=queries {
        let docs: Vec<serde_json::Value> = (1..=k_docs)
            .map(|d| {
                serde_json::json!({
                    "doc_id": d,
                    "title": format!("Topic t{q}z{d}"),
                    "content": format!(
                        "Record w{q}x{d} measures quantity m{q}y{d} carefully. Later notes about w{q}x{d} follow here."
                    ),
                })
            })
            .collect();
        let rec = serde_json::json!({
            "query_id": format!("s{q:04}"),
            "query_text": format!("What does record {q} say?"),
            "query_language": "en",
            "documents": docs,
        });
        writeln!(out, "{rec}").unwrap();
    }
    std::fs::write(path, out).unwrap();
    path.to_owned()
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn langs(codes: &[&str]) -> Vec<LanguageTag> {
    codes.iter().map(|c| LanguageTag::new(c).unwrap()).collect()
}

/// Config rooted in `dir` with the tagging translator.
pub fn config(dir: &Path, experiment: Experiment, languages: &[&str], dataset: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(experiment, "scripted", langs(languages), dataset);
    cfg.cache_dir = dir.join("cache");
    cfg.out_dir = dir.join("out");
    cfg.translator = "tagging".into();
    cfg.backend = "scripted".into();
    cfg
}

pub fn scripted_runner(cfg: ExperimentConfig, backend: ScriptedBackend) -> Runner {
    Runner::new(cfg).unwrap().with_backend(Box::new(backend)).with_translator(Box::new(TaggingTranslator))
}


/// Lanczos approximation of `ln Γ(x)` for `x > 0` (g = 7, nine terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Student t density with `df` degrees of freedom.
pub fn t_density(x: f64, df: f64) -> f64 {
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Two-sided p-value `P(|T| >= |t|)` by integrating the density.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let inner = simpson(|x| t_density(x, df), 0.0, t.abs(), 20_000);
    (1.0 - 2.0 * inner).clamp(0.0, 1.0)
}

/// Textbook paired t statistic on `b - a`: `(t, df)`.
pub fn paired_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean / (var / n).sqrt(), n - 1.0)
}

/// Complementary error function (Chebyshev fit, relative error < 1.2e-7).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98
                                    + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sided critical value of the central t distribution, by bisection.
pub fn t_critical(alpha: f64, df: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 50.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if t_two_sided_p(mid, df) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Power of the two-sided two-sample t-test with `n` per group, by
/// integrating the normal tail probabilities over the chi-square law of
/// the pooled variance.
pub fn power_oracle(effect: f64, n: usize, alpha: f64) -> f64 {
    let df = 2.0 * n as f64 - 2.0;
    let delta = effect * (n as f64 / 2.0).sqrt();
    let c = t_critical(alpha, df);
    let ln_norm = -(df / 2.0) * 2f64.ln() - ln_gamma(df / 2.0);
    let chi = |v: f64| {
        if v <= 0.0 {
            return 0.0;
        }
        (ln_norm + (df / 2.0 - 1.0) * v.ln() - v / 2.0).exp()
    };
    let upper = df + 40.0 * (2.0 * df).sqrt();
    simpson(
        |v| {
            let s = (v / df).sqrt();
            chi(v) * (normal_cdf(delta - c * s) + normal_cdf(-delta - c * s))
        },
        0.0,
        upper,
        40_000,
    )
}
