//! Staged, file-backed runs: ingest → features → train-shallow → perturb →
//! score → game → report.
//!
//! Every stage reads its inputs from and writes its outputs to the run's
//! output directory (atomically), so any stage can be rerun on its own once
//! its inputs exist. `manifest.json` records the config hash, the seed, and
//! each completed stage's version and artifact hashes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, EvalReport, FeatureTable};
use crate::corpus::{self, Corpus, CorpusError, CorpusSplit, FormatTag, IngestOptions};
use crate::features::{self, CapitalizedSpanExtractor, FeatureError, FeatureVector, HashingEmbedder, SentenceEmbedder};
use crate::gaming::{self, GamingError, GeneratorTier, MinedBigram, PhraseSet};
use crate::gateway::llm::{ChatCompletionsClient, FixtureLlm, HashStubLlm, TextCompletion};
use crate::gateway::prompts::DaPrompts;
use crate::gateway::remote::{RemoteEmbedder, RemoteScorer};
use crate::gateway::{
    BackendError, DaScorer, Gateway, GatewayError, MetricBackend, MetricScore, Registry, RegistryBuilder, ScoreCache,
    ScoreRequest, CHATGPT_CONTEXT_FREE, CHATGPT_DA, DEFAULT_CONCURRENCY, MOCK_LEXICAL,
};
use crate::io::{derive_seed, sha256_hex, write_atomic};
use crate::perturbation::{self, Lexicon, PerturbError, RewritePrompts, VariantKind, VariantRecord};
use crate::shallow_model::{ModelError, NetworkConfig, TrainedModel};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const FEATURES_FILE: &str = "features.jsonl";
pub const FEATURES_CSV_FILE: &str = "features.csv";
pub const MODEL_FILE: &str = "shallow_model.json";
pub const VARIANTS_FILE: &str = "variants.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const MINED_FILE: &str = "mined_bigrams.json";
pub const GAMED_VARIANTS_FILE: &str = "gamed_variants.jsonl";
pub const GAMED_SCORES_FILE: &str = "gamed_scores.jsonl";
pub const REPORTS_DIR: &str = "reports";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing {artifact}; run the {stage} stage first")]
    MissingArtifact { artifact: PathBuf, stage: Stage },
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("features for {summary_id}: {source}")]
    Features { summary_id: String, source: FeatureError },
    #[error("shallow model: {0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Gateway(#[from] GatewayError),
    #[error("perturbation: {0}")]
    Perturb(#[from] PerturbError),
    #[error("gaming: {0}")]
    Gaming(#[from] GamingError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
}

impl PipelineError {
    /// Process exit code: 1 usage/config, 2 data, 3 backend.
    pub fn exit_code(&self) -> i32 {
        let backend = |e: &GatewayError| match e {
            GatewayError::UnknownMetric(_) | GatewayError::DuplicateMetric(_) | GatewayError::OfflineViolation(_) => 1,
            GatewayError::EmptyCandidate => 2,
            _ => 3,
        };
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Gateway(e) | PipelineError::Analysis(AnalysisError::Gateway(e)) => backend(e),
            PipelineError::Perturb(PerturbError::Backend(_)) => 3,
            PipelineError::Features { source: FeatureError::Embedding(_), .. } => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Features,
    TrainShallow,
    Perturb,
    Score,
    Game,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Ingest, Stage::Features, Stage::TrainShallow, Stage::Perturb, Stage::Score, Stage::Game, Stage::Report];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::TrainShallow => "train-shallow",
            Stage::Perturb => "perturb",
            Stage::Score => "score",
            Stage::Game => "game",
            Stage::Report => "report",
        }
    }

    /// Bumped whenever a stage's output format or semantics change.
    pub fn version(self) -> u32 {
        1
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.iter().copied().find(|st| st.as_str() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Auc,
    Replicate,
    Featcorr,
    Ablation,
    Sensitivity,
    Gaming,
    Contextualize,
}

impl Analysis {
    pub const ALL: [Analysis; 7] = [
        Analysis::Auc,
        Analysis::Replicate,
        Analysis::Featcorr,
        Analysis::Ablation,
        Analysis::Sensitivity,
        Analysis::Gaming,
        Analysis::Contextualize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Analysis::Auc => "auc",
            Analysis::Replicate => "replicate",
            Analysis::Featcorr => "featcorr",
            Analysis::Ablation => "ablation",
            Analysis::Sensitivity => "sensitivity",
            Analysis::Gaming => "gaming",
            Analysis::Contextualize => "contextualize",
        }
    }
}

impl FromStr for Analysis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Analysis::ALL.iter().copied().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown analysis {s:?}"))
    }
}

/// Text-completion backend for DA scoring and rewrites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LlmMode {
    #[default]
    None,
    /// Deterministic offline stand-in; ratings are hash-derived.
    HashStub,
    /// Recorded replies from `llm_fixtures`.
    Fixtures,
    /// OpenAI-compatible endpoint configured through the environment.
    Live,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataFiles {
    pub da_prompts: Option<PathBuf>,
    pub rewrite_prompts: Option<PathBuf>,
    pub phrases: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub kinds: Vec<VariantKind>,
    /// Use only the deterministic local transforms.
    pub fallback_only: bool,
    pub synonym_rate: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self { kinds: VariantKind::FALLBACKS.to_vec(), fallback_only: true, synonym_rate: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GamingConfig {
    pub percentile: f64,
    pub top_k: usize,
    pub aggregate_top_k: usize,
    /// Metrics to game; all configured metrics when unset.
    pub metrics: Option<Vec<String>>,
    /// Gaming kind compared against generator gains.
    pub contextualize_kind: VariantKind,
}

impl Default for GamingConfig {
    fn default() -> Self {
        Self {
            percentile: 80.0,
            top_k: 20,
            aggregate_top_k: 100,
            metrics: None,
            contextualize_kind: VariantKind::GamedAssertion,
        }
    }
}

fn default_format() -> String {
    "unified".into()
}

fn default_metrics() -> Vec<String> {
    vec![MOCK_LEXICAL.into()]
}

fn default_analyses() -> Vec<Analysis> {
    vec![Analysis::Auc, Analysis::Replicate, Analysis::Featcorr, Analysis::Sensitivity, Analysis::Gaming]
}

fn default_concurrency() -> usize {
    DEFAULT_CONCURRENCY
}

/// Run configuration, read from TOML. Relative paths are resolved against
/// the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default)]
    pub label_threshold: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Explicit dev datasets; otherwise `dev_count` chosen by seed.
    #[serde(default)]
    pub dev_datasets: Option<Vec<String>>,
    #[serde(default)]
    pub dev_count: Option<usize>,
    pub out_dir: PathBuf,
    /// Score cache log; `<out_dir>/score_cache.jsonl` when unset.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub offline: bool,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
    /// Remote metric endpoints: metric id → sidecar base URL.
    #[serde(default)]
    pub backends: BTreeMap<String, String>,
    /// Sidecar base URL for sentence embeddings; hashing embedder if unset.
    #[serde(default)]
    pub embedder: Option<String>,
    #[serde(default)]
    pub llm: LlmMode,
    #[serde(default)]
    pub llm_fixtures: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub data: DataFiles,
    #[serde(default)]
    pub perturb: PerturbConfig,
    #[serde(default)]
    pub gaming: GamingConfig,
    #[serde(default)]
    pub model: NetworkConfig,
    #[serde(default)]
    pub generator_tiers: BTreeMap<String, GeneratorTier>,
    #[serde(default = "default_analyses")]
    pub analyses: Vec<Analysis>,
    /// Metrics to replicate; all configured metrics when unset.
    #[serde(default)]
    pub replicate_metrics: Option<Vec<String>>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Loads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.out_dir);
        for p in [
            self.cache.as_mut(),
            self.llm_fixtures.as_mut(),
            self.data.da_prompts.as_mut(),
            self.data.rewrite_prompts.as_mut(),
            self.data.phrases.as_mut(),
            self.data.lexicon.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        FormatTag::from_str(&self.format).map_err(PipelineError::Config)?;
        if self.metrics.is_empty() {
            return bad("at least one metric is required".into());
        }
        let mut seen = BTreeSet::new();
        for m in &self.metrics {
            if !seen.insert(m) {
                return bad(format!("metric {m} listed twice"));
            }
        }
        if self.offline {
            if self.llm == LlmMode::Live {
                return bad("offline runs cannot use the live LLM".into());
            }
            if let Some(m) = self.metrics.iter().find(|m| self.backends.contains_key(*m)) {
                return bad(format!("offline runs cannot use remote backend {m}"));
            }
            if self.embedder.is_some() {
                return bad("offline runs cannot use a remote embedder".into());
            }
        }
        if self.llm == LlmMode::Fixtures && self.llm_fixtures.is_none() {
            return bad("llm = \"fixtures\" needs llm_fixtures".into());
        }
        let needs_llm = !self.perturb.fallback_only || self.analyses.contains(&Analysis::Ablation);
        if needs_llm && self.llm == LlmMode::None {
            return bad("LLM rewrites and the ablation analysis need an llm backend".into());
        }
        if self.perturb.fallback_only {
            if let Some(k) = self.perturb.kinds.iter().find(|k| !VariantKind::FALLBACKS.contains(k)) {
                return bad(format!("{k} has no deterministic fallback; set perturb.fallback_only = false"));
            }
        }
        if let Some(k) = self.perturb.kinds.iter().find(|k| !k.is_rewrite()) {
            return bad(format!("{k} is not a rewrite kind"));
        }
        if self.concurrency == 0 {
            return bad("concurrency must be positive".into());
        }
        self.model.validate()?;
        Ok(())
    }

    /// SHA-256 of the config's JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes"))
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| self.out_dir.join("score_cache.jsonl"))
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageRecord {
    pub version: u32,
    /// Artifact file name → SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

/// Run provenance. Contains no timestamps, so identical runs produce
/// identical manifests.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Option<Self>, PipelineError> {
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| PipelineError::Artifact { path: path.to_path_buf(), message: e.to_string() })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<String, PipelineError> {
    write_atomic(path, bytes).map_err(io_err(path))?;
    Ok(sha256_hex(bytes))
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|x| serde_json::to_string(x).expect("record serializes") + "\n").collect()
}

fn read_required(path: &Path, stage: Stage) -> Result<String, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact { artifact: path.to_path_buf(), stage });
    }
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, stage: Stage) -> Result<Vec<T>, PipelineError> {
    read_required(path, stage)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Artifact {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureLine {
    summary_id: String,
    #[serde(flatten)]
    features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MinedOutput {
    per_metric: BTreeMap<String, Vec<MinedBigram>>,
    aggregate: Vec<gaming::AggregatedBigram>,
}

/// What `train-shallow` fits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainObjective {
    /// Binary factuality labels (cross-entropy).
    Labels,
    /// One metric's scores (squared error).
    Metric(String),
}

impl FromStr for TrainObjective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "labels" => Ok(Self::Labels),
            _ => match s.strip_prefix("metric:") {
                Some(m) if !m.is_empty() => Ok(Self::Metric(m.to_string())),
                _ => Err(format!("objective must be labels or metric:<id>, got {s:?}")),
            },
        }
    }
}

/// Executes stages against one config.
pub struct Pipeline {
    config: RunConfig,
    llm: Option<Arc<dyn TextCompletion>>,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self { config, llm: None })
    }

    /// Overrides the LLM backend chosen by the config (used by tests).
    pub fn with_llm(mut self, llm: Arc<dyn TextCompletion>) -> Self {
        self.llm = Some(llm);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn run(&self, stages: &[Stage]) -> Result<(), PipelineError> {
        for &stage in stages {
            log::info!("stage {stage}");
            let artifacts = match stage {
                Stage::Ingest => self.ingest()?,
                Stage::Features => self.features()?,
                Stage::TrainShallow => self.train_shallow(&TrainObjective::Labels)?,
                Stage::Perturb => self.perturb()?,
                Stage::Score => self.score()?,
                Stage::Game => {
                    let mut a = self.mine()?;
                    a.extend(self.apply_gaming()?);
                    a
                }
                Stage::Report => self.report(&self.config.analyses, None)?,
            };
            self.record(stage, artifacts)?;
        }
        Ok(())
    }

    /// Runs one stage with non-default options and records it in the
    /// manifest.
    pub fn run_custom(
        &self,
        stage: Stage,
        step: impl FnOnce(&Self) -> Result<BTreeMap<String, String>, PipelineError>,
    ) -> Result<(), PipelineError> {
        log::info!("stage {stage}");
        let artifacts = step(self)?;
        self.record(stage, artifacts)
    }

    pub fn run_all(&self) -> Result<(), PipelineError> {
        self.run(&Stage::ALL)
    }

    fn record(&self, stage: Stage, artifacts: BTreeMap<String, String>) -> Result<(), PipelineError> {
        let path = self.config.artifact(MANIFEST_FILE);
        let hash = self.config.hash();
        let mut manifest = match Manifest::load(&path)? {
            Some(m) if m.config_hash == hash && m.seed == self.config.seed => m,
            _ => Manifest { config_hash: hash, seed: self.config.seed, stages: BTreeMap::new() },
        };
        let entry = manifest.stages.entry(stage).or_default();
        entry.version = stage.version();
        entry.artifacts.extend(artifacts);
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        write_file(&path, json.as_bytes())?;
        Ok(())
    }

    fn llm(&self) -> Result<Arc<dyn TextCompletion>, PipelineError> {
        if let Some(l) = &self.llm {
            return Ok(l.clone());
        }
        match self.config.llm {
            LlmMode::None => Err(PipelineError::Config("no llm backend configured".into())),
            LlmMode::HashStub => Ok(Arc::new(HashStubLlm)),
            LlmMode::Fixtures => {
                let path = self.config.llm_fixtures.as_ref().expect("validated");
                Ok(Arc::new(FixtureLlm::load(path).map_err(io_err(path))?))
            }
            LlmMode::Live => Ok(Arc::new(
                ChatCompletionsClient::from_env().map_err(|e| PipelineError::Gateway(GatewayError::Backend(e)))?,
            )),
        }
    }

    fn da_prompts(&self) -> Result<DaPrompts, PipelineError> {
        match &self.config.data.da_prompts {
            Some(p) => DaPrompts::load(p).map_err(PipelineError::Config),
            None => Ok(DaPrompts::builtin()),
        }
    }

    fn register(&self, builder: RegistryBuilder, metric: &str) -> Result<RegistryBuilder, PipelineError> {
        let c = self.config.concurrency;
        if let Some(url) = self.config.backends.get(metric) {
            return Ok(builder.register_with_concurrency(
                MetricBackend::remote(metric, url.clone()),
                Arc::new(RemoteScorer::new(url, metric)),
                c,
            ));
        }
        Ok(match metric {
            MOCK_LEXICAL => builder.register_with_concurrency(
                MetricBackend::builtin(MOCK_LEXICAL),
                Arc::new(crate::gateway::MockLexical),
                c,
            ),
            CHATGPT_DA => builder.register_with_concurrency(
                MetricBackend::llm_prompt(CHATGPT_DA),
                Arc::new(DaScorer::with_context(self.llm()?, &self.da_prompts()?)),
                c,
            ),
            CHATGPT_CONTEXT_FREE => builder.register_with_concurrency(
                MetricBackend::llm_prompt(CHATGPT_CONTEXT_FREE),
                Arc::new(DaScorer::context_free(self.llm()?, &self.da_prompts()?)),
                c,
            ),
            other => {
                return Err(PipelineError::Config(format!("metric {other} has no backend; add it under [backends]")))
            }
        })
    }

    fn gateway(&self, metrics: &[String]) -> Result<Gateway, PipelineError> {
        let mut builder = Registry::builder(self.config.offline);
        for m in metrics {
            builder = self.register(builder, m)?;
        }
        let cache_path = self.config.cache_path();
        let cache = ScoreCache::open(&cache_path).map_err(io_err(&cache_path))?;
        Ok(Gateway::new(builder.build()?, cache))
    }

    fn load_corpus(&self) -> Result<Corpus, PipelineError> {
        let text = read_required(&self.config.artifact(CORPUS_FILE), Stage::Ingest)?;
        Ok(corpus::ingest_str(&text, FormatTag::Unified, &IngestOptions::default())?)
    }

    fn load_features(&self) -> Result<FeatureTable, PipelineError> {
        let lines: Vec<FeatureLine> = read_jsonl(&self.config.artifact(FEATURES_FILE), Stage::Features)?;
        Ok(lines.into_iter().map(|l| (l.summary_id, l.features)).collect())
    }

    fn load_model(&self) -> Result<TrainedModel<f64>, PipelineError> {
        let path = self.config.artifact(MODEL_FILE);
        let json = read_required(&path, Stage::TrainShallow)?;
        Ok(TrainedModel::from_json(&json)?)
    }

    pub fn ingest(&self) -> Result<BTreeMap<String, String>, PipelineError> {
        let c = &self.config;
        let format = FormatTag::from_str(&c.format).map_err(PipelineError::Config)?;
        let raw = corpus::ingest(&c.corpus, format, &IngestOptions { label_threshold: c.label_threshold })?;
        let datasets = raw.datasets();
        let split = match &c.dev_datasets {
            Some(dev) => CorpusSplit::with_dev(&datasets, &dev.iter().cloned().collect())?,
            None => CorpusSplit::random(&datasets, c.dev_count.unwrap_or(datasets.len() / 2), c.seed),
        };
        let split_corpus = corpus::split_by_dataset(&raw, &split)?;
        let mut split_json = serde_json::to_string_pretty(&split).expect("split serializes");
        split_json.push('\n');
        Ok(BTreeMap::from([
            (CORPUS_FILE.into(), write_file(&c.artifact(CORPUS_FILE), split_corpus.to_jsonl().as_bytes())?),
            (SPLIT_FILE.into(), write_file(&c.artifact(SPLIT_FILE), split_json.as_bytes())?),
        ]))
    }

    pub fn features(&self) -> Result<BTreeMap<String, String>, PipelineError> {
        let corpus = self.load_corpus()?;
        let embedder: Box<dyn SentenceEmbedder> = match &self.config.embedder {
            Some(url) => Box::new(RemoteEmbedder::new(url)),
            None => Box::new(HashingEmbedder::default()),
        };
        let extractor = CapitalizedSpanExtractor::default();
        let mut lines = Vec::new();
        for s in corpus.summaries() {
            let doc = corpus.document_of(s);
            let fv = features::extract_features(&s.text, &doc.text, embedder.as_ref(), &extractor)
                .map_err(|source| PipelineError::Features { summary_id: s.summary_id.clone(), source })?;
            lines.push(FeatureLine { summary_id: s.summary_id.clone(), features: fv });
        }
        let mut csv = format!("summary_id,{}\n", FeatureVector::NAMES.join(","));
        for l in &lines {
            let cols: Vec<String> = l.features.to_array().iter().map(|x| x.to_string()).collect();
            csv.push_str(&format!("{},{}\n", l.summary_id, cols.join(",")));
        }
        let c = &self.config;
        Ok(BTreeMap::from([
            (FEATURES_FILE.into(), write_file(&c.artifact(FEATURES_FILE), to_jsonl(&lines).as_bytes())?),
            (FEATURES_CSV_FILE.into(), write_file(&c.artifact(FEATURES_CSV_FILE), csv.as_bytes())?),
        ]))
    }

    /// Trains on dev rows: against human labels (`shallow_model.json`) or
    /// regressing onto one metric's scores (`shallow_model.<metric>.json`).
    pub fn train_shallow(&self, objective: &TrainObjective) -> Result<BTreeMap<String, String>, PipelineError> {
        let corpus = self.load_corpus()?;
        let features = self.load_features()?;
        let (name, model) = match objective {
            TrainObjective::Labels => {
                (MODEL_FILE.to_string(), analysis::train_shallow_classifier(&corpus, &features, &self.config.model)?)
            }
            TrainObjective::Metric(metric) => {
                let scores: Vec<MetricScore> = read_jsonl(&self.config.artifact(SCORES_FILE), Stage::Score)?;
                let rep = analysis::replicate_metric(&corpus, &features, &scores, metric, &self.config.model)?;
                log::info!("{metric}: test spearman {:.4} (n = {})", rep.spearman, rep.n_test);
                (format!("shallow_model.{metric}.json"), rep.model)
            }
        };
        let path = self.config.artifact(&name);
        Ok(BTreeMap::from([(name, write_file(&path, model.to_json().as_bytes())?)]))
    }

    pub fn perturb(&self) -> Result<BTreeMap<String, String>, PipelineError> {
        let corpus = self.load_corpus()?;
        let cfg = &self.config.perturb;
        let lexicon = match &self.config.data.lexicon {
            Some(p) => Lexicon::load(p)?,
            None => Lexicon::builtin(),
        };
        let rewrite = if cfg.fallback_only {
            None
        } else {
            let prompts = match &self.config.data.rewrite_prompts {
                Some(p) => RewritePrompts::load(p)?,
                None => RewritePrompts::builtin(),
            };
            Some((self.llm()?, prompts))
        };

        let mut variants = perturbation::ingest_corrections(&corpus)?;
        for s in corpus.summaries().iter().filter(|s| s.corrected_of.is_none()) {
            let source = &corpus.document_of(s).text;
            for &kind in &cfg.kinds {
                let seed = derive_seed(self.config.seed, &format!("{}::{kind}", s.summary_id));
                let made = match (&rewrite, kind) {
                    (Some((llm, prompts)), _) => {
                        perturbation::llm_rewrite(&s.summary_id, &s.text, source, kind, llm.as_ref(), prompts)
                    }
                    (None, VariantKind::Shuffled) => perturbation::shuffle_sentences(&s.summary_id, &s.text, seed),
                    (None, VariantKind::AddedSourceText) => {
                        perturbation::add_least_relevant_source_sentence(&s.summary_id, &s.text, source)
                    }
                    (None, VariantKind::SynonymReplacement) => {
                        perturbation::synonym_replace(&s.summary_id, &s.text, &lexicon, cfg.synonym_rate, seed)
                    }
                    (None, other) => unreachable!("validated: {other} has no fallback"),
                };
                match made {
                    Ok(v) => variants.push(v),
                    Err(PerturbError::CannotShuffle(id)) => log::info!("{id}: single sentence, not shuffled"),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        let path = self.config.artifact(VARIANTS_FILE);
        Ok(BTreeMap::from([(VARIANTS_FILE.into(), write_file(&path, to_jsonl(&variants).as_bytes())?)]))
    }

    fn score_items(
        &self,
        gateway: &Gateway,
        corpus: &Corpus,
        metrics: &[String],
        items: &[(String, String, String, Option<String>)],
    ) -> Result<Vec<MetricScore>, PipelineError> {
        let mut out = Vec::new();
        for metric in metrics {
            let reqs: Vec<ScoreRequest> = items
                .iter()
                .filter(|(_, _, _, target)| target.as_deref().is_none_or(|t| t == metric))
                .map(|(doc_id, variant_id, text, _)| ScoreRequest {
                    doc_id,
                    variant_id,
                    document: &corpus.document(doc_id).expect("validated").text,
                    candidate: text,
                })
                .collect();
            let results = gateway.score_batch(metric, &reqs);
            let hits = results.iter().filter(|r| matches!(r, Ok(s) if s.cached)).count();
            log::info!("{metric}: {} scores ({hits} cached)", results.len());
            for r in results {
                out.push(r?);
            }
        }
        out.sort_by(|a, b| (&a.metric_id, &a.variant_id).cmp(&(&b.metric_id, &b.variant_id)));
        Ok(out)
    }

    pub fn score(&self) -> Result<BTreeMap<String, String>, PipelineError> {
        let corpus = self.load_corpus()?;
        let variants_path = self.config.artifact(VARIANTS_FILE);
        let variants: Vec<VariantRecord> = if variants_path.exists() {
            read_jsonl(&variants_path, Stage::Perturb)?
        } else {
            log::warn!("no {VARIANTS_FILE}; scoring original summaries only");
            Vec::new()
        };
        let gateway = self.gateway(&self.config.metrics)?;
        let mut items: Vec<(String, String, String, Option<String>)> =
            corpus.summaries().iter().map(|s| (s.doc_id.clone(), s.summary_id.clone(), s.text.clone(), None)).collect();
        let known: BTreeSet<&str> = corpus.summaries().iter().map(|s| s.summary_id.as_str()).collect();
        for v in variants.iter().filter(|v| !known.contains(v.variant_id.as_str())) {
            let base = corpus.summary(&v.base_summary_id).ok_or_else(|| PipelineError::Artifact {
                path: self.config.artifact(VARIANTS_FILE),
                message: format!("variant {} has unknown base {}", v.variant_id, v.base_summary_id),
            })?;
            items.push((base.doc_id.clone(), v.variant_id.clone(), v.text.clone(), v.target_metric.clone()));
        }
        let scores = self.score_items(&gateway, &corpus, &self.config.metrics, &items)?;
        let path = self.config.artifact(SCORES_FILE);
        Ok(BTreeMap::from([(SCORES_FILE.into(), write_file(&path, to_jsonl(&scores).as_bytes())?)]))
    }

    fn gaming_metrics(&self) -> Vec<String> {
        self.config.gaming.metrics.clone().unwrap_or_else(|| self.config.metrics.clone())
    }

    /// Mines high-tf·idf bigrams from each metric's top-scoring summaries.
    pub fn mine(&self) -> Result<BTreeMap<String, String>, PipelineError> {
        let corpus = self.load_corpus()?;
        let scores: Vec<MetricScore> = read_jsonl(&self.config.artifact(SCORES_FILE), Stage::Score)?;
        let metrics = self.gaming_metrics();
        let g = &self.config.gaming;
        let originals: Vec<_> = corpus.summaries().iter().filter(|s| s.corrected_of.is_none()).collect();

        let mut per_metric = BTreeMap::new();
        for metric in &metrics {
            let by_id: BTreeMap<&str, f64> =
                scores.iter().filter(|s| &s.metric_id == metric).map(|s| (s.variant_id.as_str(), s.score)).collect();
            let rows: Vec<(&str, f64)> = originals
                .iter()
                .filter_map(|s| by_id.get(s.summary_id.as_str()).map(|&x| (s.text.as_str(), x)))
                .collect();
            per_metric.insert(metric.clone(), gaming::mine_bigrams(&rows, g.percentile, g.top_k, metric)?);
        }
        let aggregate = gaming::aggregate_across_metrics(&per_metric, g.aggregate_top_k);
        let mut mined = serde_json::to_string_pretty(&MinedOutput { per_metric, aggregate }).expect("serializes");
        mined.push('\n');
        let path = self.config.artifact(MINED_FILE);
        Ok(BTreeMap::from([(MINED_FILE.into(), write_file(&path, mined.as_bytes())?)]))
    }

    /// Builds phrase-suffixed variants of every original summary and
    /// scores them.
    pub fn apply_gaming(&self) -> Result<BTreeMap<String, String>, PipelineError> {
        let corpus = self.load_corpus()?;
        let phrases = match &self.config.data.phrases {
            Some(p) => PhraseSet::load(p)?,
            None => PhraseSet::builtin(),
        };
        let metrics = self.gaming_metrics();
        let originals: Vec<_> = corpus.summaries().iter().filter(|s| s.corrected_of.is_none()).collect();

        let mut gamed: BTreeMap<String, VariantRecord> = BTreeMap::new();
        for s in &originals {
            for metric in &metrics {
                for v in gaming::build_gamed_variants(s, &phrases, metric)? {
                    gamed.entry(v.variant_id.clone()).or_insert(v);
                }
            }
        }
        let gamed: Vec<VariantRecord> = gamed.into_values().collect();
        let items: Vec<_> = gamed
            .iter()
            .map(|v| {
                let doc_id = corpus.summary(&v.base_summary_id).expect("built from corpus").doc_id.clone();
                (doc_id, v.variant_id.clone(), v.text.clone(), v.target_metric.clone())
            })
            .collect();
        let gateway = self.gateway(&metrics)?;
        let gamed_scores = self.score_items(&gateway, &corpus, &metrics, &items)?;

        let c = &self.config;
        Ok(BTreeMap::from([
            (GAMED_VARIANTS_FILE.into(), write_file(&c.artifact(GAMED_VARIANTS_FILE), to_jsonl(&gamed).as_bytes())?),
            (GAMED_SCORES_FILE.into(), write_file(&c.artifact(GAMED_SCORES_FILE), to_jsonl(&gamed_scores).as_bytes())?),
        ]))
    }

    /// Writes `<analysis>.csv` and `<analysis>.json` for each analysis into
    /// `out` (default `<out_dir>/reports`).
    pub fn report(&self, analyses: &[Analysis], out: Option<&Path>) -> Result<BTreeMap<String, String>, PipelineError> {
        let c = &self.config;
        let corpus = self.load_corpus()?;
        let scores: Vec<MetricScore> = read_jsonl(&c.artifact(SCORES_FILE), Stage::Score)?;
        let default_dir = c.artifact(REPORTS_DIR);
        let dir = out.unwrap_or(&default_dir);
        let prefix = if out.is_none() { format!("{REPORTS_DIR}/") } else { format!("{}/", dir.display()) };
        let mut written = BTreeMap::new();
        let mut emit = |name: &str, report: EvalReport| -> Result<(), PipelineError> {
            report.write(dir, name).map_err(io_err(dir))?;
            written.insert(format!("{prefix}{name}.csv"), sha256_hex(report.to_csv()));
            written.insert(format!("{prefix}{name}.json"), sha256_hex(report.to_json()));
            Ok(())
        };

        for &a in analyses {
            let report = match a {
                Analysis::Auc => {
                    let features = self.load_features()?;
                    let model = self.load_model()?;
                    analysis::auc_by_domain(&corpus, &scores, Some((&model, &features)))?
                }
                Analysis::Replicate => {
                    let features = self.load_features()?;
                    let mut out = EvalReport::default();
                    for m in c.replicate_metrics.as_ref().unwrap_or(&c.metrics) {
                        let rep = analysis::replicate_metric(&corpus, &features, &scores, m, &c.model)?;
                        out.extend(rep.to_report()?);
                    }
                    out
                }
                Analysis::Featcorr => analysis::feature_metric_correlation(&corpus, &self.load_features()?, &scores)?,
                Analysis::Ablation => {
                    let gateway = self.gateway(&[CHATGPT_DA.to_string(), CHATGPT_CONTEXT_FREE.to_string()])?;
                    analysis::context_ablation(&corpus, &gateway)?
                }
                Analysis::Sensitivity => {
                    let variants: Vec<VariantRecord> = read_jsonl(&c.artifact(VARIANTS_FILE), Stage::Perturb)?;
                    analysis::delta_report("sensitivity", &perturbation::sensitivity_report(&scores, &variants)?)?
                }
                Analysis::Gaming | Analysis::Contextualize => {
                    let gamed: Vec<VariantRecord> = read_jsonl(&c.artifact(GAMED_VARIANTS_FILE), Stage::Game)?;
                    let mut all: Vec<MetricScore> = read_jsonl(&c.artifact(GAMED_SCORES_FILE), Stage::Game)?;
                    all.extend(scores.iter().cloned());
                    if a == Analysis::Gaming {
                        analysis::delta_report("gaming", &gaming::gaming_report(&all, &gamed)?)?
                    } else {
                        let rows = gaming::contextualize_vs_model_gains(
                            &corpus,
                            &all,
                            &gamed,
                            &c.generator_tiers,
                            c.gaming.contextualize_kind,
                        )?;
                        analysis::gains_report(&rows)?
                    }
                }
            };
            emit(a.as_str(), report)?;
        }
        Ok(written)
    }
}

impl From<BackendError> for PipelineError {
    fn from(e: BackendError) -> Self {
        PipelineError::Gateway(GatewayError::Backend(e))
    }
}
