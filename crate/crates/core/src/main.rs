use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use langpref::adapters::LexicalBackend;
use langpref::probe::wire::serve;
use langpref::runner::{parse_languages, Experiment, ExperimentConfig, PlotKind, Runner, Stage};

#[derive(Parser)]
#[command(name = "langpref", version, about = "Measure citation language preference of RAG models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Translate evidence documents (and queries, when needed) into the target languages.
    Translate(Common),
    /// Generate reference reports and segment them into statements.
    GenerateReports(Common),
    /// Keep statements that pass judge majority and entailment.
    Filter(Common),
    /// Probe next-token citation predictions for every context variant.
    Probe(Common),
    /// Compute accuracy, gaps, significance and design-specific metrics.
    Analyze(Common),
    /// Run all stages, then render plots.
    Run(Common),
    /// Render plots from analysis results.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Plot kinds; all applicable kinds by default.
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<String>,
    },
    /// Serve the built-in lexical backend over the line-delimited probe protocol.
    ServeBackend {
        #[arg(long, default_value_t = 8)]
        layers: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated target languages.
    #[arg(long)]
    languages: Option<String>,
    #[arg(long)]
    experiment: Option<String>,
    /// `eli5_webgpt` or `miracl`.
    #[arg(long)]
    dataset_format: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Probe backend spec: `lexical` or `cmd:<command>`.
    #[arg(long)]
    backend: Option<String>,
    /// Skip stages already completed under the same configuration.
    #[arg(long)]
    resume: bool,
}

impl Common {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => {
                let (Some(exp), Some(model), Some(langs), Some(data)) =
                    (&self.experiment, &self.model, &self.languages, &self.dataset)
                else {
                    bail!("without --config, --experiment, --model, --languages and --dataset are required");
                };
                ExperimentConfig::new(exp.parse()?, model, parse_languages(langs)?, data)
            }
        };
        if let Some(e) = &self.experiment {
            cfg.experiment = e.parse::<Experiment>()?;
        }
        if let Some(m) = &self.model {
            cfg.model_id = m.clone();
        }
        if let Some(l) = &self.languages {
            cfg.languages = parse_languages(l)?;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(f) = &self.dataset_format {
            cfg.dataset_format = f.clone();
        }
        if let Some(c) = &self.cache_dir {
            cfg.cache_dir = c.clone();
        }
        if let Some(o) = &self.out_dir {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = &self.backend {
            cfg.backend = b.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn plot_kinds(raw: &[String]) -> anyhow::Result<Vec<PlotKind>> {
    if raw.is_empty() {
        return Ok(PlotKind::ALL.to_vec());
    }
    raw.iter().map(|k| k.parse().map_err(anyhow::Error::from)).collect()
}

fn stage(common: &Common, stage: Stage) -> anyhow::Result<()> {
    let mut runner = Runner::new(common.config()?)?;
    runner.run_stage(stage)?;
    println!("{stage}: wrote outputs to {}", runner.layout().root.display());
    if stage == Stage::Probe {
        println!("probe: {} backend calls", runner.probe_calls());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Translate(c) => stage(c, Stage::Translate),
        Command::GenerateReports(c) => stage(c, Stage::GenerateReports),
        Command::Filter(c) => stage(c, Stage::Filter),
        Command::Probe(c) => stage(c, Stage::Probe),
        Command::Analyze(c) => stage(c, Stage::Analyze),
        Command::Run(c) => (|| {
            let mut runner = Runner::new(c.config()?)?;
            let summary = runner.run(c.resume)?;
            let plots = runner.plot(&PlotKind::ALL)?;
            println!(
                "run: {} stages run, {} skipped, {} probe calls, {} plot files in {}",
                summary.stages_run.len(),
                summary.stages_skipped.len(),
                summary.probe_calls,
                plots.len(),
                runner.layout().root.display()
            );
            Ok(())
        })(),
        Command::Plot { common, kinds } => (|| {
            let runner = Runner::new(common.config()?)?;
            for path in runner.plot(&plot_kinds(kinds)?)? {
                println!("{}", path.display());
            }
            Ok(())
        })(),
        Command::ServeBackend { layers } => {
            let backend = LexicalBackend::with_layers(*layers);
            serve(&backend, io::stdin().lock(), io::stdout().lock()).context("serving backend")
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
