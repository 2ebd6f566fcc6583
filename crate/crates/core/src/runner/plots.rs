use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use plotters::coord::ranged1d::SegmentValue;
use plotters::prelude::*;

use super::analysis::AnalysisResults;
use super::config::Experiment;
use super::store::write_atomic;
use crate::contextlab::PositionLabel;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PlotKind {
    AccuracyBars,
    PositionHeatmap,
    LayerLines,
    VariantScatter,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] =
        [PlotKind::AccuracyBars, PlotKind::PositionHeatmap, PlotKind::LayerLines, PlotKind::VariantScatter];

    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::AccuracyBars => "accuracy_bars",
            PlotKind::PositionHeatmap => "position_heatmap",
            PlotKind::LayerLines => "layer_lines",
            PlotKind::VariantScatter => "variant_scatter",
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        PlotKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown plot kind {s:?}")))
    }
}

fn plot_err(e: impl Display) -> Error {
    Error::InvalidOutput(format!("plot rendering failed: {e}"))
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(plot_err)?;
    for r in rows {
        w.write_record(&r).map_err(plot_err)?;
    }
    write_atomic(path, &w.into_inner().map_err(plot_err)?)
}

fn skip(kind: PlotKind, why: &str) -> Result<Vec<PathBuf>> {
    log::warn!("{} plot skipped: {why}", kind.as_str());
    Ok(Vec::new())
}

/// Renders one SVG plus the CSV of plotted values. Returns the written
/// paths, or nothing when the results hold no data for `kind`.
pub fn emit_plots(results: &AnalysisResults, kind: PlotKind, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let svg = dir.join(format!("{}.svg", kind.as_str()));
    let data = dir.join(format!("{}.csv", kind.as_str()));
    let title = format!("{} / {}", results.model_id, results.experiment);
    match kind {
        PlotKind::AccuracyBars => {
            if results.cells.is_empty() {
                return skip(kind, "no accuracy cells");
            }
            let labels: Vec<String> = results.cells.iter().map(|c| c.variant.to_string()).collect();
            let values: Vec<f64> = results.cells.iter().map(|c| c.acc).collect();
            bars(&svg, &title, &labels, &values)?;
            let rows = results
                .cells
                .iter()
                .map(|c| vec![c.variant.to_string(), c.language.to_string(), c.n.to_string(), c.acc.to_string()])
                .collect();
            write_csv(&data, &["variant", "language", "n", "acc"], rows)?;
        }
        PlotKind::PositionHeatmap => {
            if results.positions.iter().all(|p| p.bins.total() == 0) {
                return skip(kind, "no position-labelled predictions");
            }
            heatmap(&svg, &title, results)?;
            let mut rows = Vec::new();
            for p in &results.positions {
                for label in PositionLabel::ALL {
                    let b = p.bins.get(label);
                    let acc = b.acc.map(|a| a.to_string()).unwrap_or_default();
                    rows.push(vec![p.variant.to_string(), label.as_str().to_owned(), b.n.to_string(), acc]);
                }
            }
            write_csv(&data, &["variant", "position", "n", "acc"], rows)?;
        }
        PlotKind::LayerLines => {
            if results.layers.iter().all(|l| l.counts.layers.is_empty()) {
                return skip(kind, "no layer traces");
            }
            layer_lines(&svg, &title, results)?;
            let mut rows = Vec::new();
            for l in &results.layers {
                for (i, c) in l.counts.layers.iter().enumerate() {
                    rows.push(vec![
                        l.variant.to_string(),
                        (i + 1).to_string(),
                        c.correct.to_string(),
                        c.incorrect_citation.to_string(),
                        c.other.to_string(),
                        l.counts.n.to_string(),
                    ]);
                }
            }
            write_csv(&data, &["variant", "layer", "correct", "incorrect_citation", "other", "n"], rows)?;
        }
        PlotKind::VariantScatter => {
            if !matches!(results.experiment, Experiment::QueryLanguage | Experiment::RelevanceVsLanguage) {
                return skip(kind, "design has no context variants beyond the cited language");
            }
            if results.cells.is_empty() {
                return skip(kind, "no accuracy cells");
            }
            scatter(&svg, &title, results)?;
            let rows = results
                .cells
                .iter()
                .map(|c| {
                    vec![c.language.to_string(), c.variant.kind.as_str().to_owned(), c.n.to_string(), c.acc.to_string()]
                })
                .collect();
            write_csv(&data, &["language", "variant", "n", "acc"], rows)?;
        }
    }
    Ok(vec![svg, data])
}

fn center_label(labels: &[String]) -> impl Fn(&SegmentValue<usize>) -> String + '_ {
    move |v| match v {
        SegmentValue::CenterOf(i) => labels.get(*i).cloned().unwrap_or_default(),
        _ => String::new(),
    }
}

fn bars(path: &Path, title: &str, labels: &[String], values: &[f64]) -> Result<()> {
    let root = SVGBackend::new(path, (160 + 90 * labels.len() as u32, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d((0..labels.len()).into_segmented(), 0.0..1.0)
        .map_err(plot_err)?;
    let fmt = center_label(labels);
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(labels.len())
        .x_label_formatter(&fmt)
        .y_desc("citation accuracy")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(values.iter().enumerate().map(|(i, &v)| {
            let mut bar = Rectangle::new(
                [(SegmentValue::Exact(i), 0.0), (SegmentValue::Exact(i + 1), v)],
                BLUE.mix(0.6).filled(),
            );
            bar.set_margin(0, 0, 8, 8);
            bar
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn heatmap(path: &Path, title: &str, results: &AnalysisResults) -> Result<()> {
    let cols: Vec<String> = results.positions.iter().map(|p| p.variant.to_string()).collect();
    let rows: Vec<String> = PositionLabel::ALL.iter().map(|l| l.as_str().to_owned()).collect();
    let root = SVGBackend::new(path, (200 + 90 * cols.len() as u32, 320)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d((0..cols.len()).into_segmented(), (0..rows.len()).into_segmented())
        .map_err(plot_err)?;
    let (xf, yf) = (center_label(&cols), center_label(&rows));
    chart
        .configure_mesh()
        .disable_mesh()
        .x_labels(cols.len())
        .y_labels(rows.len())
        .x_label_formatter(&xf)
        .y_label_formatter(&yf)
        .draw()
        .map_err(plot_err)?;
    let mut cells = Vec::new();
    for (x, p) in results.positions.iter().enumerate() {
        for (y, label) in PositionLabel::ALL.iter().enumerate() {
            let color = match p.bins.get(*label).acc {
                Some(a) => HSLColor(0.6, 0.7, 0.95 - 0.6 * a).filled(),
                None => RGBColor(220, 220, 220).filled(),
            };
            cells.push(Rectangle::new(
                [
                    (SegmentValue::Exact(x), SegmentValue::Exact(y)),
                    (SegmentValue::Exact(x + 1), SegmentValue::Exact(y + 1)),
                ],
                color,
            ));
        }
    }
    chart.draw_series(cells).map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn layer_lines(path: &Path, title: &str, results: &AnalysisResults) -> Result<()> {
    let panels = results.layers.len() as u32;
    let root = SVGBackend::new(path, (640, 60 + 260 * panels)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let root = root.titled(title, ("sans-serif", 18)).map_err(plot_err)?;
    for (area, row) in root.split_evenly((results.layers.len(), 1)).iter().zip(&results.layers) {
        let depth = row.counts.layers.len();
        let mut chart = ChartBuilder::on(area)
            .caption(row.variant.to_string(), ("sans-serif", 14))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(45)
            .build_cartesian_2d(1..depth.max(2), 0..row.counts.n.max(1))
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("layer").y_desc("statements").draw().map_err(plot_err)?;
        type Series = (&'static str, RGBColor, fn(&crate::metrics::LayerCounts) -> usize);
        let series: [Series; 3] = [
            ("correct", GREEN, |c| c.correct),
            ("incorrect citation", RED, |c| c.incorrect_citation),
            ("other", BLACK, |c| c.other),
        ];
        for (name, color, get) in series {
            chart
                .draw_series(LineSeries::new(row.counts.layers.iter().enumerate().map(|(i, c)| (i + 1, get(c))), color))
                .map_err(plot_err)?
                .label(name)
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

fn scatter(path: &Path, title: &str, results: &AnalysisResults) -> Result<()> {
    let mut langs: Vec<String> = Vec::new();
    let mut kinds = Vec::new();
    for c in &results.cells {
        if !langs.contains(&c.language.to_string()) {
            langs.push(c.language.to_string());
        }
        if !kinds.contains(&c.variant.kind) {
            kinds.push(c.variant.kind);
        }
    }
    let root = SVGBackend::new(path, (200 + 110 * langs.len() as u32, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d((0..langs.len()).into_segmented(), 0.0..1.0)
        .map_err(plot_err)?;
    let fmt = center_label(&langs);
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(langs.len())
        .x_label_formatter(&fmt)
        .y_desc("citation accuracy")
        .draw()
        .map_err(plot_err)?;
    for (k, kind) in kinds.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        let points: Vec<(SegmentValue<usize>, f64)> = results
            .cells
            .iter()
            .filter(|c| c.variant.kind == *kind)
            .filter_map(|c| {
                langs.iter().position(|l| *l == c.language.to_string()).map(|x| (SegmentValue::CenterOf(x), c.acc))
            })
            .collect();
        chart
            .draw_series(points.into_iter().map(|p| Circle::new(p, 5, color.filled())))
            .map_err(plot_err)?
            .label(kind.as_str())
            .legend(move |(x, y)| Circle::new((x + 8, y), 4, color.filled()));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}
