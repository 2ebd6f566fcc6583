use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::analysis::AnalysisResults;
use super::store::write_atomic;
use crate::contextlab::{ContextVariant, VariantKind};
use crate::error::{Error, Result};
use crate::metrics::{AccuracyCell, GapResult, Stars};

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum MetricLine<'a> {
    Cell(&'a AccuracyCell),
    Gap(&'a GapResult),
}

/// One JSON line per accuracy cell, then one per gap row.
pub fn write_metrics_jsonl(results: &[AnalysisResults], mut out: impl Write) -> Result<()> {
    let io = |e: std::io::Error| Error::InvalidOutput(format!("writing metrics: {e}"));
    for r in results {
        for c in &r.cells {
            serde_json::to_writer(&mut out, &MetricLine::Cell(c)).map_err(|e| Error::InvalidOutput(e.to_string()))?;
            out.write_all(b"\n").map_err(io)?;
        }
        for g in &r.gaps {
            serde_json::to_writer(&mut out, &MetricLine::Gap(g)).map_err(|e| Error::InvalidOutput(e.to_string()))?;
            out.write_all(b"\n").map_err(io)?;
        }
    }
    Ok(())
}

fn row_label(v: &ContextVariant) -> String {
    match v.kind {
        VariantKind::CitedInLanguage => "cited".to_owned(),
        k => k.as_str().to_owned(),
    }
}

fn render_cell(cell: &AccuracyCell, gap: Option<&GapResult>) -> String {
    let acc = format!("{:.2}", cell.acc * 100.0);
    match gap {
        Some(g) => {
            let stars = if g.stars == Stars::Ns { "" } else { g.stars.as_str() };
            format!("{acc} ({:+.2}{stars})", g.delta * 100.0)
        }
        None => acc,
    }
}

/// Accuracy table in percent: one row per (language, variant), one column
/// per model. Compared cells carry `(delta stars)`; `ns` is left blank.
pub fn write_table_csv(results: &[AnalysisResults], out: impl Write) -> Result<()> {
    let mut models: Vec<&str> = Vec::new();
    let mut rows: Vec<&ContextVariant> = Vec::new();
    for r in results {
        if !r.cells.is_empty() && !models.contains(&r.model_id.as_str()) {
            models.push(&r.model_id);
        }
        for c in &r.cells {
            if !rows.contains(&&c.variant) {
                rows.push(&c.variant);
            }
        }
    }
    let csv_err = |e: csv::Error| Error::InvalidOutput(format!("writing table: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["language", "variant"];
    header.extend(models.iter().copied());
    w.write_record(&header).map_err(csv_err)?;
    for variant in rows {
        let mut record = vec![variant.language.to_string(), row_label(variant)];
        for model in &models {
            let found = results.iter().filter(|r| r.model_id == *model).find_map(|r| {
                let cell = r.cells.iter().find(|c| &c.variant == variant)?;
                Some(render_cell(cell, r.gaps.iter().find(|g| &g.variant == variant)))
            });
            record.push(found.unwrap_or_default());
        }
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::InvalidOutput(format!("writing table: {e}")))?;
    Ok(())
}

pub fn emit_tables(results: &[AnalysisResults], jsonl: &Path, csv: &Path) -> Result<()> {
    let mut lines = Vec::new();
    write_metrics_jsonl(results, &mut lines)?;
    write_atomic(jsonl, &lines)?;
    let mut table = Vec::new();
    write_table_csv(results, &mut table)?;
    write_atomic(csv, &table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::TestKind;
    use crate::runner::Experiment;

    #[test]
    fn empty_results_give_header_only() {
        let mut buf = Vec::new();
        write_table_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "language,variant\n");
        let empty = AnalysisResults {
            experiment: Experiment::EnglishPreference,
            model_id: "m".into(),
            test: TestKind::Paired,
            family_size: 1,
            cells: vec![],
            gaps: vec![],
            positions: vec![],
            layers: vec![],
            attribution: vec![],
            notices: vec![],
        };
        let mut buf = Vec::new();
        write_table_csv(std::slice::from_ref(&empty), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "language,variant\n");
        let mut lines = Vec::new();
        write_metrics_jsonl(&[empty], &mut lines).unwrap();
        assert!(lines.is_empty());
    }
}
