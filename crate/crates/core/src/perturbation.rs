//! Controlled summary variants: human corrections, LLM-backed benign
//! rewrites, and deterministic local fallbacks for three rewrite kinds.
//! Also the per-(metric, kind) score-delta report over those variants.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::Corpus;
use crate::features::rouge2_f1;
use crate::gateway::llm::TextCompletion;
use crate::gateway::prompts::fill_template;
use crate::gateway::{BackendError, MetricScore};
use crate::stats;
use crate::text;

const BUILTIN_REWRITE_PROMPTS: &str = include_str!("../data/rewrite_prompts.v1.toml");
const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.v1.tsv");

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("corrected_of chain forms a cycle: {}", .0.join(" -> "))]
    CorrectionCycle(Vec<String>),
    #[error("no prompt template for kind {0}")]
    NoTemplate(VariantKind),
    #[error("empty reply for {kind} rewrite of {base}")]
    EmptyReply { base: String, kind: VariantKind },
    #[error("cannot shuffle {0}: fewer than 2 sentences")]
    CannotShuffle(String),
    #[error("source for {0} has no sentences")]
    EmptySource(String),
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("replacement rate {0} outside (0, 1]")]
    BadRate(f64),
    #[error("variant {0} has empty text")]
    EmptyText(String),
    #[error("variant {0}: corrected variants must have human provenance")]
    BadProvenance(String),
    #[error("no {metric_id} score for base {base_id} of variant {variant_id}")]
    MissingBaseScore { metric_id: String, base_id: String, variant_id: String },
    #[error("conflicting {metric_id} scores for {variant_id}")]
    ConflictingScores { metric_id: String, variant_id: String },
    #[error("{path}: {message}")]
    DataFile { path: String, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Corrected,
    Shuffled,
    AddedSourceText,
    LessDiverse,
    Negated,
    Simplified,
    Shortened,
    Paraphrased,
    SynonymReplacement,
    GamedTop,
    GamedAssertion,
    GamedBaseline,
    GamedQualifier,
    PhraseOnlyTop,
    PhraseOnlyAssertion,
}

impl VariantKind {
    pub const ALL: [VariantKind; 15] = [
        Self::Corrected,
        Self::Shuffled,
        Self::AddedSourceText,
        Self::LessDiverse,
        Self::Negated,
        Self::Simplified,
        Self::Shortened,
        Self::Paraphrased,
        Self::SynonymReplacement,
        Self::GamedTop,
        Self::GamedAssertion,
        Self::GamedBaseline,
        Self::GamedQualifier,
        Self::PhraseOnlyTop,
        Self::PhraseOnlyAssertion,
    ];

    /// Benign rewrites, each with a prompt template.
    pub const REWRITES: [VariantKind; 8] = [
        Self::Shuffled,
        Self::AddedSourceText,
        Self::LessDiverse,
        Self::Negated,
        Self::Simplified,
        Self::Shortened,
        Self::Paraphrased,
        Self::SynonymReplacement,
    ];

    /// Rewrite kinds with a deterministic local implementation.
    pub const FALLBACKS: [VariantKind; 3] = [Self::Shuffled, Self::AddedSourceText, Self::SynonymReplacement];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Corrected => "corrected",
            Self::Shuffled => "shuffled",
            Self::AddedSourceText => "added_source_text",
            Self::LessDiverse => "less_diverse",
            Self::Negated => "negated",
            Self::Simplified => "simplified",
            Self::Shortened => "shortened",
            Self::Paraphrased => "paraphrased",
            Self::SynonymReplacement => "synonym_replacement",
            Self::GamedTop => "gamed_top",
            Self::GamedAssertion => "gamed_assertion",
            Self::GamedBaseline => "gamed_baseline",
            Self::GamedQualifier => "gamed_qualifier",
            Self::PhraseOnlyTop => "phrase_only_top",
            Self::PhraseOnlyAssertion => "phrase_only_assertion",
        }
    }

    pub fn is_rewrite(self) -> bool {
        Self::REWRITES.contains(&self)
    }

    pub fn is_gaming(self) -> bool {
        matches!(
            self,
            Self::GamedTop
                | Self::GamedAssertion
                | Self::GamedBaseline
                | Self::GamedQualifier
                | Self::PhraseOnlyTop
                | Self::PhraseOnlyAssertion
        )
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.iter().copied().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown variant kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Human,
    Llm,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub variant_id: String,
    pub base_summary_id: String,
    pub kind: VariantKind,
    pub text: String,
    pub provenance: Provenance,
    /// Set when the variant may not differ from its base as intended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    /// Metric whose wording the variant uses (per-metric assertion phrases).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_metric: Option<String>,
}

impl VariantRecord {
    /// Builds a variant with id `{base}::{kind}`.
    pub fn new(
        base_summary_id: &str,
        kind: VariantKind,
        text: String,
        provenance: Provenance,
    ) -> Result<Self, PerturbError> {
        let rec = Self {
            variant_id: format!("{base_summary_id}::{kind}"),
            base_summary_id: base_summary_id.to_string(),
            kind,
            text,
            provenance,
            warning: None,
            target_metric: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        if self.text.trim().is_empty() {
            return Err(PerturbError::EmptyText(self.variant_id.clone()));
        }
        if self.kind == VariantKind::Corrected && self.provenance != Provenance::Human {
            return Err(PerturbError::BadProvenance(self.variant_id.clone()));
        }
        Ok(())
    }

    fn with_warning(mut self, warning: impl Into<String>) -> Self {
        self.warning = Some(warning.into());
        self
    }
}

/// One corrected variant per `corrected_of` link, keeping the human text
/// verbatim. The variant id is the correcting summary's own id, so its
/// score is the summary's score.
pub fn ingest_corrections(corpus: &Corpus) -> Result<Vec<VariantRecord>, PerturbError> {
    let mut out = Vec::new();
    for s in corpus.summaries() {
        let Some(target) = &s.corrected_of else { continue };
        let mut chain = vec![s.summary_id.clone()];
        let mut seen: BTreeSet<&str> = BTreeSet::from([s.summary_id.as_str()]);
        let mut cur = corpus.summary(target);
        while let Some(c) = cur {
            chain.push(c.summary_id.clone());
            if !seen.insert(&c.summary_id) {
                return Err(PerturbError::CorrectionCycle(chain));
            }
            cur = c.corrected_of.as_deref().and_then(|t| corpus.summary(t));
        }
        let mut rec = VariantRecord::new(target, VariantKind::Corrected, s.text.clone(), Provenance::Human)?;
        rec.variant_id = s.summary_id.clone();
        out.push(rec);
    }
    Ok(out)
}

/// Rewrite prompt templates keyed by kind, with `{summary}` and `{source}`
/// slots.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RewritePrompts {
    pub version: u32,
    pub templates: BTreeMap<VariantKind, String>,
}

impl RewritePrompts {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_REWRITE_PROMPTS, "builtin").expect("bundled rewrite prompts parse")
    }

    pub fn load(path: &Path) -> Result<Self, PerturbError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PerturbError::DataFile { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text, &path.display().to_string())
    }

    fn parse(text: &str, origin: &str) -> Result<Self, PerturbError> {
        let err = |message: String| PerturbError::DataFile { path: origin.to_string(), message };
        let prompts: Self = toml::from_str(text).map_err(|e| err(e.to_string()))?;
        for (kind, template) in &prompts.templates {
            if !kind.is_rewrite() {
                return Err(err(format!("{kind} is not a rewrite kind")));
            }
            if !template.contains("{summary}") {
                return Err(err(format!("template for {kind} has no {{summary}} slot")));
            }
        }
        Ok(prompts)
    }

    pub fn template(&self, kind: VariantKind) -> Result<&str, PerturbError> {
        self.templates.get(&kind).map(String::as_str).ok_or(PerturbError::NoTemplate(kind))
    }
}

/// Fills the kind's prompt and keeps the trimmed reply as the variant text.
/// A reply identical to the input is kept with a warning.
pub fn llm_rewrite(
    base_summary_id: &str,
    summary: &str,
    source: &str,
    kind: VariantKind,
    llm: &dyn TextCompletion,
    prompts: &RewritePrompts,
) -> Result<VariantRecord, PerturbError> {
    let prompt = fill_template(prompts.template(kind)?, summary, source);
    let reply = llm.complete(&prompt)?;
    let reply = reply.trim();
    if reply.is_empty() {
        return Err(PerturbError::EmptyReply { base: base_summary_id.to_string(), kind });
    }
    let rec = VariantRecord::new(base_summary_id, kind, reply.to_string(), Provenance::Llm)?;
    if text::normalized(reply) == text::normalized(summary) {
        log::warn!("{} rewrite of {base_summary_id} is unchanged", kind);
        return Ok(rec.with_warning("reply identical to input"));
    }
    Ok(rec)
}

/// Reorders sentences with a seeded non-identity permutation, joined by
/// single spaces.
pub fn shuffle_sentences(base_summary_id: &str, summary: &str, seed: u64) -> Result<VariantRecord, PerturbError> {
    let sents = text::sentences(summary);
    if sents.len() < 2 {
        return Err(PerturbError::CannotShuffle(base_summary_id.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..sents.len()).collect();
    while order.iter().enumerate().all(|(i, &j)| i == j) {
        order.shuffle(&mut rng);
    }
    let text = order.iter().map(|&i| sents[i]).collect::<Vec<_>>().join(" ");
    VariantRecord::new(base_summary_id, VariantKind::Shuffled, text, Provenance::Deterministic)
}

/// Index of the source sentence with the lowest ROUGE-2 F1 against the
/// summary; ties go to the earliest sentence.
pub fn least_relevant_sentence(summary: &str, source: &str) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in text::sentences(source).iter().enumerate() {
        let f = rouge2_f1(s, summary);
        if best.is_none_or(|(_, b)| f < b) {
            best = Some((i, f));
        }
    }
    best.map(|(i, _)| i)
}

/// Appends the least relevant source sentence to the summary.
pub fn add_least_relevant_source_sentence(
    base_summary_id: &str,
    summary: &str,
    source: &str,
) -> Result<VariantRecord, PerturbError> {
    let idx = least_relevant_sentence(summary, source)
        .ok_or_else(|| PerturbError::EmptySource(base_summary_id.to_string()))?;
    let sentence = text::sentences(source)[idx];
    let text = format!("{} {sentence}", summary.trim_end());
    VariantRecord::new(base_summary_id, VariantKind::AddedSourceText, text, Provenance::Deterministic)
}

/// Single-word synonym map keyed by lowercase word.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_LEXICON, "builtin").expect("bundled lexicon parses")
    }

    pub fn load(path: &Path) -> Result<Self, PerturbError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PerturbError::DataFile { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Tab-separated `word<TAB>synonym` lines; `#` starts a comment line.
    pub fn parse(text: &str, origin: &str) -> Result<Self, PerturbError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| PerturbError::DataFile {
                path: origin.to_string(),
                message: format!("line {}: {message}", i + 1),
            };
            let (word, syn) = line.split_once('\t').ok_or_else(|| err("expected word<TAB>synonym"))?;
            if text::words(word).len() != 1 || text::words(syn).len() != 1 {
                return Err(err("entries must be single words"));
            }
            entries.insert(word.trim().to_lowercase(), syn.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self { entries: pairs.into_iter().map(|(w, s)| (w.to_lowercase(), s.to_string())).collect() }
    }

    pub fn get(&self, word: &str) -> Option<&str> {
        self.entries.get(&word.to_lowercase()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn match_case(original: &str, replacement: &str) -> String {
    let mut chars = original.chars();
    match chars.next() {
        Some(c) if c.is_uppercase() && chars.all(|c| c.is_uppercase()) && original.chars().count() > 1 => {
            replacement.to_uppercase()
        }
        Some(c) if c.is_uppercase() => {
            let mut r = replacement.chars();
            r.next().map(|f| f.to_uppercase().chain(r).collect()).unwrap_or_default()
        }
        _ => replacement.to_string(),
    }
}

/// Replaces `⌈rate · hits⌉` lexicon hits chosen by seeded sampling, leaving
/// all other characters in place.
pub fn synonym_replace(
    base_summary_id: &str,
    summary: &str,
    lexicon: &Lexicon,
    rate: f64,
    seed: u64,
) -> Result<VariantRecord, PerturbError> {
    if lexicon.is_empty() {
        return Err(PerturbError::EmptyLexicon);
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(PerturbError::BadRate(rate));
    }
    let hits: Vec<(usize, &str, &str)> =
        summary.unicode_word_indices().filter_map(|(pos, w)| lexicon.get(w).map(|syn| (pos, w, syn))).collect();
    if hits.is_empty() {
        let rec = VariantRecord::new(
            base_summary_id,
            VariantKind::SynonymReplacement,
            summary.to_string(),
            Provenance::Deterministic,
        )?;
        return Ok(rec.with_warning("no lexicon hits"));
    }
    // subtract a hair so products like 0.3 · 10 do not round up past 3
    let k = ((rate * hits.len() as f64 - 1e-9).ceil() as usize).clamp(1, hits.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, hits.len(), k).into_vec();
    chosen.sort_unstable();

    let mut out = String::with_capacity(summary.len());
    let mut cursor = 0;
    for i in chosen {
        let (pos, word, syn) = hits[i];
        out.push_str(&summary[cursor..pos]);
        out.push_str(&match_case(word, syn));
        cursor = pos + word.len();
    }
    out.push_str(&summary[cursor..]);
    VariantRecord::new(base_summary_id, VariantKind::SynonymReplacement, out, Provenance::Deterministic)
}

/// `score(variant) − score(base)` for one variant under one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDelta {
    pub metric_id: String,
    pub kind: VariantKind,
    pub variant_id: String,
    pub base_id: String,
    pub delta: f64,
}

/// Mean, sample standard deviation (zero for a single delta) and count of
/// deltas for one (metric, kind).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub metric_id: String,
    pub kind: VariantKind,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn score_index(scores: &[MetricScore]) -> Result<HashMap<(&str, &str), f64>, PerturbError> {
    let mut index = HashMap::new();
    for s in scores {
        if let Some(prev) = index.insert((s.metric_id.as_str(), s.variant_id.as_str()), s.score) {
            if prev != s.score {
                return Err(PerturbError::ConflictingScores {
                    metric_id: s.metric_id.clone(),
                    variant_id: s.variant_id.clone(),
                });
            }
        }
    }
    Ok(index)
}

/// Deltas for every scored variant. Summaries are scored with their own id
/// as `variant_id`; variants without a score under a metric are skipped,
/// but a scored variant whose base is unscored is an error.
pub fn pairwise_deltas(scores: &[MetricScore], variants: &[VariantRecord]) -> Result<Vec<PairDelta>, PerturbError> {
    let index = score_index(scores)?;
    let metrics: BTreeSet<&str> = scores.iter().map(|s| s.metric_id.as_str()).collect();
    let mut out = Vec::new();
    for metric in metrics {
        for v in variants {
            let Some(&vs) = index.get(&(metric, v.variant_id.as_str())) else { continue };
            let bs =
                index.get(&(metric, v.base_summary_id.as_str())).ok_or_else(|| PerturbError::MissingBaseScore {
                    metric_id: metric.to_string(),
                    base_id: v.base_summary_id.clone(),
                    variant_id: v.variant_id.clone(),
                })?;
            out.push(PairDelta {
                metric_id: metric.to_string(),
                kind: v.kind,
                variant_id: v.variant_id.clone(),
                base_id: v.base_summary_id.clone(),
                delta: vs - bs,
            });
        }
    }
    Ok(out)
}

pub(crate) fn summarize_deltas(deltas: &[PairDelta]) -> Vec<DeltaRow> {
    let mut groups: BTreeMap<(&str, VariantKind), Vec<f64>> = BTreeMap::new();
    for d in deltas {
        groups.entry((&d.metric_id, d.kind)).or_default().push(d.delta);
    }
    groups
        .into_iter()
        .map(|((metric, kind), ds)| DeltaRow {
            metric_id: metric.to_string(),
            kind,
            mean: stats::mean(&ds).expect("group is non-empty"),
            std: stats::sample_std(&ds).expect("group is non-empty"),
            n: ds.len(),
        })
        .collect()
}

/// Mean pairwise delta per (metric, kind) over non-gaming variants.
pub fn sensitivity_report(scores: &[MetricScore], variants: &[VariantRecord]) -> Result<Vec<DeltaRow>, PerturbError> {
    let deltas = pairwise_deltas(scores, variants)?;
    let kept: Vec<PairDelta> = deltas.into_iter().filter(|d| !d.kind.is_gaming()).collect();
    Ok(summarize_deltas(&kept))
}
