//! Accuracy cells, language gaps, position bins and logit-lens layer classes.

mod attribution;
mod stats;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use attribution::{
    attribution_scores, fit_surrogate, hit_at_k, mean_attribution, rank_sentences, sample_masks, score_at_k,
    AttributionResult, Surrogate, DEFAULT_LAMBDA, DEFAULT_MASK_COUNT,
};
pub use stats::{
    bonferroni, independent_t_test, noncentral_t_cdf, paired_t_test, required_sample_size, t_test, two_sample_power,
    Stars, TTest, TestKind,
};

use crate::contextlab::{ContextVariant, PositionLabel};
use crate::corpus::LanguageTag;
use crate::error::{Error, Result};
use crate::probe::{CitationPrediction, LayerTrace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub model_id: String,
    pub language: LanguageTag,
    pub variant: ContextVariant,
    pub n: usize,
    pub correct: usize,
    pub acc: f64,
    pub mean_p_correct: f64,
    pub mean_entropy: f64,
}

/// Accuracy and mean probe statistics over one (model, variant) cell.
pub fn citation_accuracy(model_id: &str, predictions: &[CitationPrediction]) -> Result<AccuracyCell> {
    let first = predictions.first().ok_or_else(|| Error::domain("no predictions for accuracy cell"))?;
    if let Some(other) = predictions.iter().find(|p| p.variant != first.variant) {
        return Err(Error::domain(format!("mixed variants in one cell: {} and {}", first.variant, other.variant)));
    }
    let n = predictions.len();
    let correct = predictions.iter().filter(|p| p.correct).count();
    let mean = |f: fn(&CitationPrediction) -> f64| predictions.iter().map(f).sum::<f64>() / n as f64;
    Ok(AccuracyCell {
        model_id: model_id.to_owned(),
        language: first.variant.language.clone(),
        variant: first.variant.clone(),
        n,
        correct,
        acc: correct as f64 / n as f64,
        mean_p_correct: mean(|p| p.p_correct),
        mean_entropy: mean(|p| p.entropy),
    })
}

/// `acc(target) - acc(en)`.
pub fn accuracy_gap(target: &AccuracyCell, en: &AccuracyCell) -> Result<f64> {
    if target.n != en.n {
        return Err(Error::domain(format!("cells cover {} and {} statements", target.n, en.n)));
    }
    if target.model_id != en.model_id {
        return Err(Error::domain(format!("cells come from models {} and {}", target.model_id, en.model_id)));
    }
    Ok(target.acc - en.acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub test: TestKind,
    #[serde(with = "stats::extended_f64")]
    pub t_stat: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub stars: Stars,
    pub degenerate: bool,
    pub family_size: usize,
}

/// Two-sided test of `target - en` with Bonferroni correction over `family_size`.
pub fn significance(en: &[f64], target: &[f64], family_size: usize, test: TestKind) -> Result<Significance> {
    if family_size == 0 {
        return Err(Error::domain("family size must be at least 1"));
    }
    let t = t_test(test, en, target)?;
    let p_adjusted = bonferroni(t.p_raw, family_size);
    Ok(Significance {
        test,
        t_stat: t.t_stat,
        p_raw: t.p_raw,
        p_adjusted,
        stars: Stars::from_p(p_adjusted),
        degenerate: t.degenerate,
        family_size,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapResult {
    pub model_id: String,
    pub language: LanguageTag,
    pub variant: ContextVariant,
    pub baseline: ContextVariant,
    pub n: usize,
    pub acc: f64,
    pub acc_baseline: f64,
    pub delta: f64,
    #[serde(with = "stats::extended_f64")]
    pub t_stat: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub stars: Stars,
    pub test: TestKind,
    pub degenerate: bool,
    pub family_size: usize,
}

fn indicators_by_statement(preds: &[CitationPrediction]) -> Result<BTreeMap<(&str, usize), f64>> {
    let mut out = BTreeMap::new();
    for p in preds {
        let v = if p.correct { 1.0 } else { 0.0 };
        if out.insert((p.query_id.as_str(), p.statement_index), v).is_some() {
            return Err(Error::domain(format!("statement {}#{} probed twice", p.query_id, p.statement_index)));
        }
    }
    Ok(out)
}

/// Gap row comparing a variant against a baseline over the same statements.
pub fn compare(
    model_id: &str,
    baseline: &[CitationPrediction],
    target: &[CitationPrediction],
    family_size: usize,
    test: TestKind,
) -> Result<GapResult> {
    let base_cell = citation_accuracy(model_id, baseline)?;
    let tgt_cell = citation_accuracy(model_id, target)?;
    let base = indicators_by_statement(baseline)?;
    let tgt = indicators_by_statement(target)?;
    if base.keys().ne(tgt.keys()) {
        return Err(Error::domain(format!(
            "{} and {} cover different statements",
            base_cell.variant, tgt_cell.variant
        )));
    }
    let delta = accuracy_gap(&tgt_cell, &base_cell)?;
    let a: Vec<f64> = base.values().copied().collect();
    let b: Vec<f64> = tgt.values().copied().collect();
    let sig = significance(&a, &b, family_size, test)?;
    Ok(GapResult {
        model_id: model_id.to_owned(),
        language: tgt_cell.language,
        variant: tgt_cell.variant,
        baseline: base_cell.variant,
        n: tgt_cell.n,
        acc: tgt_cell.acc,
        acc_baseline: base_cell.acc,
        delta,
        t_stat: sig.t_stat,
        p_raw: sig.p_raw,
        p_adjusted: sig.p_adjusted,
        stars: sig.stars,
        test,
        degenerate: sig.degenerate,
        family_size,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionBin {
    pub label: PositionLabel,
    pub n: usize,
    pub correct: usize,
    /// `None` for an empty bin.
    pub acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionBinnedAccuracy {
    pub bins: Vec<PositionBin>,
}

impl PositionBinnedAccuracy {
    pub fn get(&self, label: PositionLabel) -> &PositionBin {
        self.bins.iter().find(|b| b.label == label).expect("all labels present")
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.n).sum()
    }
}

/// Accuracy within each cited-document position bin.
pub fn bin_by_position(predictions: &[CitationPrediction], labels: &[PositionLabel]) -> Result<PositionBinnedAccuracy> {
    if predictions.len() != labels.len() {
        return Err(Error::domain(format!("{} predictions but {} labels", predictions.len(), labels.len())));
    }
    let bins = PositionLabel::ALL
        .iter()
        .map(|&label| {
            let members: Vec<&CitationPrediction> =
                predictions.iter().zip(labels).filter(|(_, &l)| l == label).map(|(p, _)| p).collect();
            let n = members.len();
            let correct = members.iter().filter(|p| p.correct).count();
            PositionBin { label, n, correct, acc: (n > 0).then(|| correct as f64 / n as f64) }
        })
        .collect();
    Ok(PositionBinnedAccuracy { bins })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerClass {
    Correct,
    IncorrectCitation,
    Other,
}

/// Maps each layer's top token to correct, another valid id, or other.
pub fn classify_layers(trace: &[String], cited_id: u8, k_docs: usize) -> Vec<LayerClass> {
    let correct = cited_id.to_string();
    trace
        .iter()
        .map(|tok| {
            if *tok == correct {
                LayerClass::Correct
            } else if is_citation_token(tok, k_docs) {
                LayerClass::IncorrectCitation
            } else {
                LayerClass::Other
            }
        })
        .collect()
}

fn is_citation_token(tok: &str, k_docs: usize) -> bool {
    tok.len() == 1
        && tok.as_bytes()[0].is_ascii_digit()
        && (1..=k_docs).contains(&((tok.as_bytes()[0] - b'0') as usize))
}

pub fn classify_trace(trace: &LayerTrace, k_docs: usize) -> Vec<LayerClass> {
    classify_layers(&trace.per_layer_top1, trace.cited_id, k_docs)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounts {
    pub correct: usize,
    pub incorrect_citation: usize,
    pub other: usize,
}

impl LayerCounts {
    pub fn total(&self) -> usize {
        self.correct + self.incorrect_citation + self.other
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerClassCounts {
    pub n: usize,
    pub layers: Vec<LayerCounts>,
}

pub fn aggregate_layer_counts(classified: &[Vec<LayerClass>]) -> Result<LayerClassCounts> {
    let Some(first) = classified.first() else {
        return Ok(LayerClassCounts::default());
    };
    let depth = first.len();
    let mut layers = vec![LayerCounts::default(); depth];
    for seq in classified {
        if seq.len() != depth {
            return Err(Error::domain(format!("ragged traces: {} and {} layers", depth, seq.len())));
        }
        for (counts, class) in layers.iter_mut().zip(seq) {
            match class {
                LayerClass::Correct => counts.correct += 1,
                LayerClass::IncorrectCitation => counts.incorrect_citation += 1,
                LayerClass::Other => counts.other += 1,
            }
        }
    }
    Ok(LayerClassCounts { n: classified.len(), layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(idx: usize, lang: &str, correct: bool) -> CitationPrediction {
        CitationPrediction {
            query_id: "q".into(),
            statement_index: idx,
            variant: ContextVariant::cited_in(LanguageTag::new(lang).unwrap()),
            cited_id: 1,
            position: None,
            top1_token: if correct { "1".into() } else { "2".into() },
            p_correct: if correct { 0.9 } else { 0.1 },
            p_top1: 0.9,
            entropy: 0.5,
            correct,
        }
    }

    #[test]
    fn accuracy_counts() {
        let preds: Vec<_> = [true, false, true, false].iter().enumerate().map(|(i, &c)| pred(i, "en", c)).collect();
        let cell = citation_accuracy("m", &preds).unwrap();
        assert_eq!((cell.n, cell.correct, cell.acc), (4, 2, 0.5));
        assert!((cell.mean_p_correct - 0.5).abs() < 1e-12);
        assert!(citation_accuracy("m", &[]).is_err());
        assert!(citation_accuracy("m", &[pred(0, "en", true), pred(1, "fr", true)]).is_err());
    }

    #[test]
    fn self_gap_is_zero() {
        let preds: Vec<_> = (0..5).map(|i| pred(i, "en", i % 2 == 0)).collect();
        let cell = citation_accuracy("m", &preds).unwrap();
        assert_eq!(accuracy_gap(&cell, &cell).unwrap(), 0.0);
        let g = compare("m", &preds, &preds, 8, TestKind::Paired).unwrap();
        assert_eq!((g.delta, g.p_raw, g.stars), (0.0, 1.0, Stars::Ns));
        assert!(g.degenerate);
    }

    #[test]
    fn gap_requires_matching_statements() {
        let en: Vec<_> = (0..3).map(|i| pred(i, "en", true)).collect();
        let fr: Vec<_> = (1..4).map(|i| pred(i, "fr", true)).collect();
        assert!(compare("m", &en, &fr, 1, TestKind::Paired).is_err());
        let short: Vec<_> = (0..2).map(|i| pred(i, "fr", true)).collect();
        let a = citation_accuracy("m", &en).unwrap();
        let b = citation_accuracy("m", &short).unwrap();
        assert!(accuracy_gap(&b, &a).is_err());
    }

    #[test]
    fn layer_classes() {
        let trace: Vec<String> = ["x", "2", "2"].iter().map(|s| s.to_string()).collect();
        use LayerClass::*;
        assert_eq!(classify_layers(&trace, 2, 3), vec![Other, Correct, Correct]);
        assert_eq!(
            classify_layers(&["7".into(), "1".into(), "10".into()], 2, 3),
            vec![Other, IncorrectCitation, Other]
        );
        let counts = aggregate_layer_counts(&[vec![Other, Correct, Correct]]).unwrap();
        assert_eq!(counts.layers[0], LayerCounts { correct: 0, incorrect_citation: 0, other: 1 });
        assert_eq!(counts.layers[2], LayerCounts { correct: 1, incorrect_citation: 0, other: 0 });
        assert!(aggregate_layer_counts(&[vec![Other], vec![Other, Correct]]).is_err());
    }

    #[test]
    fn position_bins_handle_empty() {
        let preds: Vec<_> = (0..3).map(|i| pred(i, "en", true)).collect();
        let bins = bin_by_position(&preds, &[PositionLabel::First; 3]).unwrap();
        assert_eq!(bins.get(PositionLabel::First).acc, Some(1.0));
        assert_eq!(bins.get(PositionLabel::Middle).n, 0);
        assert_eq!(bins.get(PositionLabel::Last).acc, None);
        assert_eq!(bins.total(), 3);
        assert!(bin_by_position(&preds, &[PositionLabel::First]).is_err());
    }
}
