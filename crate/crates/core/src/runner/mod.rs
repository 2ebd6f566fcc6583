//! Experiment orchestration: configuration, staged pipeline with on-disk
//! outputs, resumable manifests, and table/plot emission.

mod analysis;
pub mod build;
mod config;
mod emit;
mod plots;
mod stages;
mod store;

use std::fmt;
use std::str::FromStr;

pub use analysis::{analyze, AnalysisResults, AttributionRecord, AttributionRow, LayerRow, PositionRow, TraceRecord};
pub use config::{parse_languages, Experiment, ExperimentConfig};
pub use emit::{emit_tables, write_metrics_jsonl, write_table_csv};
pub use plots::{emit_plots, PlotKind};
pub use store::{read_json, read_jsonl, statement_seed, write_json, write_jsonl, Layout, RunManifest, StageRecord};

use crate::corpus::{QualityEstimator, TextGenerator, Translator};
use crate::error::{Error, Result};
use crate::filtergate::{EntailmentModel, Judge};
use crate::probe::ProbeBackend;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Translate,
    GenerateReports,
    Filter,
    Probe,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Translate, Stage::GenerateReports, Stage::Filter, Stage::Probe, Stage::Analyze];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Translate => "translate",
            Stage::GenerateReports => "generate_reports",
            Stage::Filter => "filter",
            Stage::Probe => "probe",
            Stage::Analyze => "analyze",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        Stage::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

const STAGE_NAMES: [&str; 5] = ["translate", "generate_reports", "filter", "probe", "analyze"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub stages_run: Vec<Stage>,
    pub stages_skipped: Vec<Stage>,
    /// Backend requests issued by the probe stage, cache hits excluded.
    pub probe_calls: usize,
    pub results: Option<AnalysisResults>,
}

/// Owns a config and the adapters it names. Adapters are built on first
/// use unless injected.
pub struct Runner {
    config: ExperimentConfig,
    layout: Layout,
    backend: Option<Box<dyn ProbeBackend>>,
    translator: Option<Box<dyn Translator>>,
    quality_estimator: Option<Box<dyn QualityEstimator>>,
    generator: Option<Box<dyn TextGenerator>>,
    judges: Option<Vec<Box<dyn Judge>>>,
    nli: Option<Box<dyn EntailmentModel>>,
    probe_calls: usize,
}

impl Runner {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config.run_dir());
        Ok(Runner {
            config,
            layout,
            backend: None,
            translator: None,
            quality_estimator: None,
            generator: None,
            judges: None,
            nli: None,
            probe_calls: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn with_backend(mut self, backend: Box<dyn ProbeBackend>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn with_translator(mut self, translator: Box<dyn Translator>) -> Self {
        self.translator = Some(translator);
        self
    }

    pub fn with_quality_estimator(mut self, qe: Box<dyn QualityEstimator>) -> Self {
        self.quality_estimator = Some(qe);
        self
    }

    pub fn with_generator(mut self, generator: Box<dyn TextGenerator>) -> Self {
        self.generator = Some(generator);
        self
    }

    pub fn with_judges(mut self, judges: Vec<Box<dyn Judge>>) -> Self {
        self.judges = Some(judges);
        self
    }

    pub fn with_nli(mut self, nli: Box<dyn EntailmentModel>) -> Self {
        self.nli = Some(nli);
        self
    }

    fn load_manifest(&self) -> Result<Option<RunManifest>> {
        let path = self.layout.manifest();
        if path.exists() {
            read_json(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    fn save_manifest(&self, manifest: &RunManifest) -> Result<()> {
        write_json(&self.layout.manifest(), manifest)
    }

    fn mismatch(found: &str, expected: &str) -> Error {
        Error::Config(format!(
            "run directory was produced by a different configuration (digest {found}, now {expected}); \
             start over without --resume"
        ))
    }

    /// Runs every stage in order. With `resume`, stages recorded as complete
    /// in a manifest with the same config digest are skipped.
    pub fn run(&mut self, resume: bool) -> Result<RunSummary> {
        let digest = self.config.digest()?;
        let mut manifest = match self.load_manifest()? {
            Some(m) if resume && m.config_digest != digest => return Err(Self::mismatch(&m.config_digest, &digest)),
            Some(m) if resume => m,
            _ => RunManifest::new(digest, &self.config.model_id),
        };
        self.save_manifest(&manifest)?;
        let mut summary = RunSummary { stages_run: vec![], stages_skipped: vec![], probe_calls: 0, results: None };
        for stage in Stage::ALL {
            if resume && manifest.is_complete(stage.as_str(), &self.layout) {
                log::info!("{stage}: complete, skipping");
                summary.stages_skipped.push(stage);
                continue;
            }
            self.execute(stage, &mut manifest, resume)?;
            summary.stages_run.push(stage);
        }
        summary.probe_calls = self.probe_calls;
        summary.results = Some(read_json(&self.layout.results())?);
        Ok(summary)
    }

    /// Runs one stage against the existing run directory.
    pub fn run_stage(&mut self, stage: Stage) -> Result<()> {
        let digest = self.config.digest()?;
        let mut manifest = match self.load_manifest()? {
            Some(m) if m.config_digest == digest => m,
            Some(m) if stage != Stage::Translate => return Err(Self::mismatch(&m.config_digest, &digest)),
            _ => RunManifest::new(digest, &self.config.model_id),
        };
        self.execute(stage, &mut manifest, false)
    }

    fn execute(&mut self, stage: Stage, manifest: &mut RunManifest, resume: bool) -> Result<()> {
        log::info!("{stage}: running");
        manifest.invalidate_from(&STAGE_NAMES, stage.as_str());
        // A resumed probe stage keeps its cell flags; finished cells come back from the cache.
        let keeps_cells = stage == Stage::Analyze || (stage == Stage::Probe && resume);
        if !keeps_cells {
            manifest.cells.clear();
        }
        let outputs = match stage {
            Stage::Translate => self.stage_translate(manifest)?,
            Stage::GenerateReports => self.stage_generate_reports()?,
            Stage::Filter => self.stage_filter()?,
            Stage::Probe => self.stage_probe(manifest)?,
            Stage::Analyze => self.stage_analyze(manifest)?,
        };
        let refs: Vec<&std::path::Path> = outputs.iter().map(|p| p.as_path()).collect();
        manifest.mark(stage.as_str(), &refs);
        self.save_manifest(manifest)
    }

    /// Backend requests issued by the most recent probe stage.
    pub fn probe_calls(&self) -> usize {
        self.probe_calls
    }

    /// Renders plots from the analyze stage's results.
    pub fn plot(&self, kinds: &[PlotKind]) -> Result<Vec<std::path::PathBuf>> {
        let path = self.layout.results();
        if !path.exists() {
            return Err(Error::MissingStage { missing: "analysis results".into(), stage: "analyze" });
        }
        let results: AnalysisResults = read_json(&path)?;
        let mut out = Vec::new();
        for kind in kinds {
            out.extend(emit_plots(&results, *kind, &self.layout.plots())?);
        }
        Ok(out)
    }
}

/// Convenience wrapper: builds a runner from `config` and runs all stages.
pub fn run_experiment(config: ExperimentConfig, resume: bool) -> Result<RunSummary> {
    Runner::new(config)?.run(resume)
}
