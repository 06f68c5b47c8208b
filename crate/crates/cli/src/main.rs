use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use factlens::corpus::FormatTag;
use factlens::perturbation::VariantKind;
use factlens::pipeline::{Analysis, Pipeline, PipelineError, RunConfig, Stage, TrainObjective};
use factlens::synthetic::{synthetic_corpus, SyntheticConfig};

const USAGE: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "factlens", version, about = "Stress-test factual-consistency metrics for summaries")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Run configuration (TOML). Without it, --corpus and --out describe the run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Forbid network access; only builtin and fixture backends resolve.
    #[arg(long, global = true)]
    offline: bool,
    /// Master seed for splits, perturbations and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Corpus file (overrides the config).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Output directory for artifacts (overrides the config).
    #[arg(long = "out-dir", global = true)]
    out_dir: Option<PathBuf>,
    /// Remote metric endpoint, `metric_id=url`; repeatable.
    #[arg(long = "backend", global = true, value_parser = parse_backend)]
    backends: Vec<(String, String)>,
    /// Score cache log.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read and validate the corpus, assign the dataset-disjoint split.
    Ingest {
        /// unified, claim-pairs or correction-pairs.
        #[arg(long)]
        format: Option<String>,
        /// Seed for choosing dev datasets (defaults to --seed).
        #[arg(long)]
        split_seed: Option<u64>,
        /// Explicit dev datasets, comma separated.
        #[arg(long, value_delimiter = ',')]
        dev_datasets: Option<Vec<String>>,
        /// Binarize numeric labels: value >= threshold is consistent.
        #[arg(long)]
        label_threshold: Option<f64>,
    },
    /// Compute shallow features (features.jsonl and features.csv).
    Features,
    /// Train the shallow MLP on dev rows.
    TrainShallow {
        /// `labels` or `metric:<id>`.
        #[arg(long, default_value = "labels", value_parser = |s: &str| s.parse::<TrainObjective>())]
        objective: TrainObjective,
    },
    /// Score summaries and variants under every configured metric.
    Score {
        /// Metrics to score (overrides the config), comma separated.
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
    },
    /// Build perturbed variants: corrections plus rewrite kinds.
    Perturb {
        /// Rewrite kinds, comma separated.
        #[arg(long, value_delimiter = ',', value_parser = |s: &str| s.parse::<VariantKind>())]
        kinds: Option<Vec<VariantKind>>,
        /// Only deterministic local transforms, no LLM rewrites.
        #[arg(long)]
        fallback_only: bool,
    },
    /// Mine metric-favoured bigrams and score phrase-suffixed variants.
    Game {
        #[arg(long)]
        mine: bool,
        #[arg(long)]
        apply: bool,
        /// Write the gaming and contextualize reports.
        #[arg(long)]
        report: bool,
    },
    /// Write analysis reports as CSV and JSON.
    Report {
        /// Analyses to run (default: those in the config), comma separated.
        #[arg(long, value_delimiter = ',', value_parser = |s: &str| s.parse::<Analysis>())]
        analysis: Option<Vec<Analysis>>,
        /// Report directory (default `<out-dir>/reports`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage in order.
    Run,
    /// Write a seeded synthetic corpus in the unified format.
    Synth {
        #[arg(long, default_value_t = 10)]
        documents: usize,
        #[arg(long, default_value_t = 4)]
        datasets: usize,
        /// Inconsistent summaries that receive a correction.
        #[arg(long, default_value_t = 0)]
        corrections: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_backend(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((m, url)) if !m.is_empty() && !url.is_empty() => Ok((m.to_string(), url.to_string())),
        _ => Err(format!("expected metric_id=url, got {s:?}")),
    }
}

enum Failure {
    Usage(String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

fn base_config(g: &GlobalArgs) -> Result<RunConfig, Failure> {
    let mut config = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let Some(corpus) = &g.corpus else {
                return Err(Failure::Usage("either --config or --corpus is required".into()));
            };
            let out = g.out_dir.clone().unwrap_or_else(|| PathBuf::from("factlens-out"));
            let mut c = RunConfig::from_toml("corpus = \"\"\nout_dir = \"\"")?;
            c.corpus = corpus.clone();
            c.out_dir = out;
            c
        }
    };
    if let Some(c) = &g.corpus {
        config.corpus = c.clone();
    }
    if let Some(o) = &g.out_dir {
        config.out_dir = o.clone();
    }
    if g.offline {
        config.offline = true;
    }
    if let Some(s) = g.seed {
        config.seed = s;
    }
    if let Some(c) = &g.cache {
        config.cache = Some(c.clone());
    }
    for (metric, url) in &g.backends {
        config.backends.insert(metric.clone(), url.clone());
    }
    Ok(config)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    if let Command::Synth { documents, datasets, corrections, out } = &cli.command {
        let cfg = SyntheticConfig {
            documents: *documents,
            datasets: *datasets,
            corrections: *corrections,
            seed: cli.global.seed.unwrap_or(SyntheticConfig::default().seed),
        };
        let corpus = synthetic_corpus(&cfg);
        corpus.write(out).map_err(|source| PipelineError::Io { path: out.clone(), source })?;
        println!("{}: {} documents, {} summaries", out.display(), corpus.documents().len(), corpus.summaries().len());
        return Ok(());
    }

    let mut config = base_config(&cli.global)?;
    match &cli.command {
        Command::Ingest { format, split_seed, dev_datasets, label_threshold } => {
            if let Some(f) = format {
                f.parse::<FormatTag>().map_err(Failure::Usage)?;
                config.format = f.clone();
            }
            if let Some(s) = split_seed {
                config.seed = *s;
            }
            if dev_datasets.is_some() {
                config.dev_datasets = dev_datasets.clone();
            }
            if label_threshold.is_some() {
                config.label_threshold = *label_threshold;
            }
        }
        Command::Score { metrics: Some(m) } => config.metrics = m.clone(),
        Command::Perturb { kinds, fallback_only } => {
            if let Some(k) = kinds {
                config.perturb.kinds = k.clone();
            }
            if *fallback_only {
                config.perturb.fallback_only = true;
            }
        }
        _ => {}
    }

    let pipeline = Pipeline::new(config)?;
    match cli.command {
        Command::Ingest { .. } => pipeline.run(&[Stage::Ingest])?,
        Command::Features => pipeline.run(&[Stage::Features])?,
        Command::TrainShallow { objective } => {
            pipeline.run_custom(Stage::TrainShallow, |p| p.train_shallow(&objective))?
        }
        Command::Score { .. } => pipeline.run(&[Stage::Score])?,
        Command::Perturb { .. } => pipeline.run(&[Stage::Perturb])?,
        Command::Game { mine, apply, report } => {
            let (mine, apply) = if !mine && !apply && !report { (true, true) } else { (mine, apply) };
            if mine {
                pipeline.run_custom(Stage::Game, |p| p.mine())?;
            }
            if apply {
                pipeline.run_custom(Stage::Game, |p| p.apply_gaming())?;
            }
            if report {
                pipeline.run_custom(Stage::Report, |p| p.report(&[Analysis::Gaming, Analysis::Contextualize], None))?;
            }
        }
        Command::Report { analysis, out } => {
            let analyses = analysis.unwrap_or_else(|| pipeline.config().analyses.clone());
            pipeline.run_custom(Stage::Report, |p| p.report(&analyses, out.as_deref()))?;
        }
        Command::Run => pipeline.run_all()?,
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(USAGE)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
