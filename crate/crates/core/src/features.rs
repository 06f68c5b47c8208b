//! The six shallow features of a (source, summary) pair.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::text::{self, contains_tokens, TokenizationPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("summary is empty: no words")]
    EmptySummary,
    #[error("source is empty: no words")]
    EmptySource,
    #[error("no sentences in {0}")]
    NoSentences(&'static str),
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error("embedder returned {got} vectors for {expected} sentences")]
    EmbeddingCount { expected: usize, got: usize },
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
}

/// Shallow features for one (document, summary) pair, in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub rouge2_f1: f64,
    pub entity_overlap: f64,
    pub semantic_sim: f64,
    pub word_novelty: f64,
    pub sentence_novelty: f64,
    pub conciseness: f64,
}

impl FeatureVector {
    pub const NAMES: [&'static str; 6] =
        ["rouge2_f1", "entity_overlap", "semantic_sim", "word_novelty", "sentence_novelty", "conciseness"];

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.rouge2_f1,
            self.entity_overlap,
            self.semantic_sim,
            self.word_novelty,
            self.sentence_novelty,
            self.conciseness,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            rouge2_f1: v[0],
            entity_overlap: v[1],
            semantic_sim: v[2],
            word_novelty: v[3],
            sentence_novelty: v[4],
            conciseness: v[5],
        }
    }

    /// Inputs as seen by the shallow model: conciseness enters as
    /// `ln(1 + ratio)`, everything else unchanged.
    pub fn model_inputs(&self) -> [f64; 6] {
        let mut v = self.to_array();
        v[5] = v[5].ln_1p();
        v
    }

    /// Checks finiteness and the declared range of every field.
    pub fn is_valid(&self) -> bool {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        self.to_array().iter().all(|x| x.is_finite())
            && unit(self.rouge2_f1)
            && unit(self.entity_overlap)
            && (-1.0..=1.0).contains(&self.semantic_sim)
            && unit(self.word_novelty)
            && unit(self.sentence_novelty)
            && self.conciseness > 0.0
    }
}

/// Extracts a set of normalized entity strings from text.
pub trait EntityExtractor: Send + Sync {
    fn extract(&self, text: &str) -> BTreeSet<String>;
}

impl<F> EntityExtractor for F
where
    F: Fn(&str) -> BTreeSet<String> + Send + Sync,
{
    fn extract(&self, text: &str) -> BTreeSet<String> {
        self(text)
    }
}

/// Offline entity extractor: maximal runs of capitalized words that do not
/// start a sentence, plus numeric tokens (years included). Entities are
/// lowercased and space-joined.
#[derive(Debug, Clone, Default)]
pub struct CapitalizedSpanExtractor {
    policy: TokenizationPolicy,
}

impl EntityExtractor for CapitalizedSpanExtractor {
    fn extract(&self, text: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for sentence in self.policy.sentences(text) {
            let tokens: Vec<(usize, &str)> = sentence.unicode_word_indices().collect();
            let mut span: Vec<&str> = Vec::new();
            let mut span_end = 0usize;
            for (pos, &(offset, word)) in tokens.iter().enumerate() {
                if is_numeric(word) {
                    out.insert(word.to_lowercase());
                }
                let capitalized = pos > 0 && word.chars().next().is_some_and(char::is_uppercase);
                let adjacent = !span.is_empty() && sentence[span_end..offset].chars().all(char::is_whitespace);
                if capitalized && (span.is_empty() || adjacent) {
                    span.push(word);
                } else {
                    flush(&mut span, &mut out);
                    if capitalized {
                        span.push(word);
                    }
                }
                span_end = offset + word.len();
            }
            flush(&mut span, &mut out);
        }
        out
    }
}

fn flush(span: &mut Vec<&str>, out: &mut BTreeSet<String>) {
    if !span.is_empty() {
        out.insert(span.join(" ").to_lowercase());
        span.clear();
    }
}

fn is_numeric(word: &str) -> bool {
    word.chars().any(|c| c.is_ascii_digit()) && word.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',')
}

/// Maps sentences to fixed-dimension vectors.
pub trait SentenceEmbedder: Send + Sync {
    fn embed(&self, sentences: &[String]) -> Result<Vec<Vec<f64>>, FeatureError>;
}

/// Deterministic bag-of-words embedder using FNV-1a feature hashing.
/// Used offline and in tests; real embeddings come from the sidecar.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    policy: TokenizationPolicy,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, policy: TokenizationPolicy::default() }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl SentenceEmbedder for HashingEmbedder {
    fn embed(&self, sentences: &[String]) -> Result<Vec<Vec<f64>>, FeatureError> {
        Ok(sentences
            .iter()
            .map(|s| {
                let mut v = vec![0.0; self.dim];
                for w in self.policy.words(s) {
                    v[(fnv1a(w.as_bytes()) % self.dim as u64) as usize] += 1.0;
                }
                v
            })
            .collect())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// ROUGE-2 F1 over within-sentence bigram multisets.
pub fn rouge2_f1(summary: &str, source: &str) -> f64 {
    let s = text::sentence_bigrams(summary);
    let r = text::sentence_bigrams(source);
    if s.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&(String, String), usize> = HashMap::new();
    for b in &r {
        *counts.entry(b).or_default() += 1;
    }
    let mut matched = 0usize;
    for b in &s {
        if let Some(c) = counts.get_mut(b) {
            if *c > 0 {
                *c -= 1;
                matched += 1;
            }
        }
    }
    if matched == 0 {
        return 0.0;
    }
    let p = matched as f64 / s.len() as f64;
    let r = matched as f64 / r.len() as f64;
    2.0 * p * r / (p + r)
}

/// Fraction of summary entities supported by the source. A summary entity
/// is supported when the extractor also finds it in the source or its
/// tokens occur contiguously in the source. Zero summary entities score 1.
pub fn entity_overlap(summary: &str, source: &str, extractor: &dyn EntityExtractor) -> f64 {
    let summary_entities = extractor.extract(summary);
    if summary_entities.is_empty() {
        return 1.0;
    }
    let source_entities = extractor.extract(source);
    let source_norm = text::normalized(source);
    let supported = summary_entities
        .iter()
        .filter(|e| source_entities.contains(*e) || contains_tokens(&source_norm, &text::normalized(e)))
        .count();
    supported as f64 / summary_entities.len() as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Mean over summary sentences of the best cosine match among source
/// sentences.
pub fn semantic_similarity(summary: &str, source: &str, embedder: &dyn SentenceEmbedder) -> Result<f64, FeatureError> {
    let summ: Vec<String> = text::sentences(summary).into_iter().map(str::to_owned).collect();
    if summ.is_empty() {
        return Err(FeatureError::NoSentences("summary"));
    }
    let src: Vec<String> = text::sentences(source).into_iter().map(str::to_owned).collect();
    if src.is_empty() {
        return Err(FeatureError::NoSentences("source"));
    }
    let summ_vecs = embed_checked(embedder, &summ)?;
    let src_vecs = embed_checked(embedder, &src)?;
    let dim = summ_vecs[0].len();
    if let Some(v) = summ_vecs.iter().chain(&src_vecs).find(|v| v.len() != dim) {
        return Err(FeatureError::DimensionMismatch(dim, v.len()));
    }

    let total: f64 =
        summ_vecs.iter().map(|s| src_vecs.iter().map(|r| cosine(s, r)).fold(f64::NEG_INFINITY, f64::max)).sum();
    Ok((total / summ_vecs.len() as f64).clamp(-1.0, 1.0))
}

fn embed_checked(embedder: &dyn SentenceEmbedder, sentences: &[String]) -> Result<Vec<Vec<f64>>, FeatureError> {
    let vecs = embedder.embed(sentences)?;
    if vecs.len() != sentences.len() {
        return Err(FeatureError::EmbeddingCount { expected: sentences.len(), got: vecs.len() });
    }
    if vecs.iter().flatten().any(|x| !x.is_finite()) {
        return Err(FeatureError::Embedding("non-finite component".into()));
    }
    Ok(vecs)
}

/// Share of unique summary word types that never appear in the source.
pub fn word_novelty(summary: &str, source: &str) -> Result<f64, FeatureError> {
    let summ: BTreeSet<String> = text::words(summary).into_iter().collect();
    if summ.is_empty() {
        return Err(FeatureError::EmptySummary);
    }
    let src: BTreeSet<String> = text::words(source).into_iter().collect();
    let novel = summ.iter().filter(|w| !src.contains(*w)).count();
    Ok(novel as f64 / summ.len() as f64)
}

/// Share of summary sentences whose normalized form is not found in the
/// normalized source.
pub fn sentence_novelty(summary: &str, source: &str) -> Result<f64, FeatureError> {
    let sents = text::sentences(summary);
    if sents.is_empty() {
        return Err(FeatureError::EmptySummary);
    }
    let src = text::normalized(source);
    let novel = sents.iter().filter(|s| !contains_tokens(&src, &text::normalized(s))).count();
    Ok(novel as f64 / sents.len() as f64)
}

/// Source word count divided by summary word count. A source without words
/// would make the ratio 0, which no real summary pair can have, so it is
/// rejected like an empty summary.
pub fn conciseness(summary: &str, source: &str) -> Result<f64, FeatureError> {
    let n_summary = text::words(summary).len();
    if n_summary == 0 {
        return Err(FeatureError::EmptySummary);
    }
    let n_source = text::words(source).len();
    if n_source == 0 {
        return Err(FeatureError::EmptySource);
    }
    Ok(n_source as f64 / n_summary as f64)
}

pub fn extract_features(
    summary: &str,
    source: &str,
    embedder: &dyn SentenceEmbedder,
    extractor: &dyn EntityExtractor,
) -> Result<FeatureVector, FeatureError> {
    Ok(FeatureVector {
        rouge2_f1: rouge2_f1(summary, source),
        entity_overlap: entity_overlap(summary, source, extractor),
        semantic_sim: semantic_similarity(summary, source, embedder)?,
        word_novelty: word_novelty(summary, source)?,
        sentence_novelty: sentence_novelty(summary, source)?,
        conciseness: conciseness(summary, source)?,
    })
}
