use serde::{Deserialize, Serialize};

use super::config::Experiment;
use crate::contextlab::{ContextVariant, PositionLabel, VariantKind};
use crate::corpus::LanguageTag;
use crate::error::Result;
use crate::metrics::{
    aggregate_layer_counts, bin_by_position, citation_accuracy, classify_trace, compare, mean_attribution,
    AccuracyCell, AttributionResult, GapResult, LayerClassCounts, PositionBinnedAccuracy, Surrogate, TestKind,
};
use crate::probe::{CitationPrediction, LayerTrace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(flatten)]
    pub trace: LayerTrace,
    pub k_docs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub query_id: String,
    pub statement_index: usize,
    pub variant: ContextVariant,
    pub cited_id: u8,
    /// Owning document of each ablated sentence.
    pub sentence_docs: Vec<u8>,
    pub surrogate: Surrogate,
    pub scores: AttributionResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionRow {
    pub variant: ContextVariant,
    pub bins: PositionBinnedAccuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub variant: ContextVariant,
    pub counts: LayerClassCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionRow {
    pub variant: ContextVariant,
    pub n: usize,
    pub mean: AttributionResult,
}

/// Everything the analyze stage derives from probe outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResults {
    pub experiment: Experiment,
    pub model_id: String,
    pub test: TestKind,
    pub family_size: usize,
    pub cells: Vec<AccuracyCell>,
    pub gaps: Vec<GapResult>,
    pub positions: Vec<PositionRow>,
    pub layers: Vec<LayerRow>,
    pub attribution: Vec<AttributionRow>,
    pub notices: Vec<String>,
}

/// Groups items by variant, keeping first-appearance order.
fn group_by_variant<T: Clone>(items: &[T], variant: impl Fn(&T) -> &ContextVariant) -> Vec<(ContextVariant, Vec<T>)> {
    let mut groups: Vec<(ContextVariant, Vec<T>)> = Vec::new();
    for item in items {
        let v = variant(item);
        match groups.iter_mut().find(|(g, _)| g == v) {
            Some((_, members)) => members.push(item.clone()),
            None => groups.push((v.clone(), vec![item.clone()])),
        }
    }
    groups
}

/// (baseline, compared) variant pairs for the design.
fn comparisons(experiment: Experiment, variants: &[ContextVariant]) -> Vec<(ContextVariant, ContextVariant)> {
    let mut out = Vec::new();
    for v in variants {
        let base_kind = match (experiment, v.kind) {
            (Experiment::QueryLanguage, VariantKind::AllEn) => None,
            (Experiment::QueryLanguage, _) => Some(VariantKind::AllEn),
            (Experiment::RelevanceVsLanguage, VariantKind::RelEnIrrEn) => None,
            (Experiment::RelevanceVsLanguage, _) => Some(VariantKind::RelEnIrrEn),
            (_, VariantKind::CitedInLanguage) if !v.language.is_en() => Some(VariantKind::CitedInLanguage),
            _ => None,
        };
        if let Some(kind) = base_kind {
            let language = if kind == VariantKind::CitedInLanguage { LanguageTag::en() } else { v.language.clone() };
            out.push((ContextVariant { kind, language }, v.clone()));
        }
    }
    out
}

pub fn analyze(
    experiment: Experiment,
    model_id: &str,
    family_size: usize,
    test: TestKind,
    predictions: &[CitationPrediction],
    traces: &[TraceRecord],
    attributions: &[AttributionRecord],
) -> Result<AnalysisResults> {
    let mut notices = Vec::new();
    let groups = group_by_variant(predictions, |p| &p.variant);
    let cells = groups.iter().map(|(_, preds)| citation_accuracy(model_id, preds)).collect::<Result<Vec<_>>>()?;

    let variants: Vec<ContextVariant> = groups.iter().map(|(v, _)| v.clone()).collect();
    let mut gaps = Vec::new();
    for (base, target) in comparisons(experiment, &variants) {
        let Some((_, base_preds)) = groups.iter().find(|(v, _)| *v == base) else {
            notices.push(format!("no baseline {base} for {target}; gap skipped"));
            continue;
        };
        let (_, target_preds) = groups.iter().find(|(v, _)| *v == target).expect("variant from groups");
        gaps.push(compare(model_id, base_preds, target_preds, family_size, test)?);
    }

    let mut positions = Vec::new();
    for (variant, preds) in &groups {
        let (with_pos, labels): (Vec<CitationPrediction>, Vec<PositionLabel>) =
            preds.iter().filter_map(|p| p.position.map(|l| (p.clone(), l))).unzip();
        if with_pos.len() < preds.len() {
            notices.push(format!("{} predictions in {variant} lack a position label", preds.len() - with_pos.len()));
        }
        positions.push(PositionRow { variant: variant.clone(), bins: bin_by_position(&with_pos, &labels)? });
    }

    let layers = group_by_variant(traces, |t| &t.trace.variant)
        .into_iter()
        .map(|(variant, recs)| {
            let classified: Vec<_> = recs.iter().map(|r| classify_trace(&r.trace, r.k_docs)).collect();
            Ok(LayerRow { variant, counts: aggregate_layer_counts(&classified)? })
        })
        .collect::<Result<Vec<_>>>()?;

    let attribution = group_by_variant(attributions, |a| &a.variant)
        .into_iter()
        .map(|(variant, recs)| {
            let scores: Vec<AttributionResult> = recs.iter().map(|r| r.scores).collect();
            Ok(AttributionRow { variant, n: recs.len(), mean: mean_attribution(&scores)? })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AnalysisResults {
        experiment,
        model_id: model_id.to_owned(),
        test,
        family_size,
        cells,
        gaps,
        positions,
        layers,
        attribution,
        notices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(kind: VariantKind, lang: &str) -> ContextVariant {
        ContextVariant { kind, language: LanguageTag::new(lang).unwrap() }
    }

    #[test]
    fn comparison_plans() {
        let ep = comparisons(
            Experiment::EnglishPreference,
            &[v(VariantKind::CitedInLanguage, "en"), v(VariantKind::CitedInLanguage, "fr")],
        );
        assert_eq!(ep, vec![(v(VariantKind::CitedInLanguage, "en"), v(VariantKind::CitedInLanguage, "fr"))]);
        let ql: Vec<_> =
            [VariantKind::AllTarget, VariantKind::AllTargetCitedEn, VariantKind::AllEn, VariantKind::AllEnCitedTarget]
                .into_iter()
                .map(|k| v(k, "ko"))
                .collect();
        let plan = comparisons(Experiment::QueryLanguage, &ql);
        assert_eq!(plan.len(), 3);
        assert!(plan.iter().all(|(b, _)| *b == v(VariantKind::AllEn, "ko")));
        let rel: Vec<_> = [VariantKind::RelEnIrrEn, VariantKind::RelTgtIrrEn, VariantKind::RelEnIrrTgt]
            .into_iter()
            .map(|k| v(k, "sw"))
            .collect();
        assert_eq!(comparisons(Experiment::RelevanceVsLanguage, &rel).len(), 2);
    }
}
