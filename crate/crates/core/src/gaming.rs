//! Score-inflating bigram mining, gaming and filler phrase variants, and
//! inflation reports.
//!
//! Mining weights bigrams by tf·idf: tf counts occurrences across the
//! top-scored summaries taken as one bag, idf is `ln(N / df)` over the whole
//! collection with no smoothing.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, SummaryRecord};
use crate::gateway::MetricScore;
use crate::perturbation::{
    pairwise_deltas, summarize_deltas, DeltaRow, PerturbError, Provenance, VariantKind, VariantRecord,
};
use crate::stats::{self, StatsError};
use crate::text;

const BUILTIN_PHRASES: &str = include_str!("../data/phrases.v1.tsv");

/// Fewest summaries [`mine_bigrams`] accepts.
pub const MIN_MINING_SUMMARIES: usize = 10;

#[derive(Debug, Error)]
pub enum GamingError {
    #[error("mining needs at least {MIN_MINING_SUMMARIES} summaries, got {0}")]
    TooFewSummaries(usize),
    #[error("percentile {0} outside (0, 100)")]
    BadPercentile(f64),
    #[error("no summaries at or above the percentile threshold")]
    EmptySelection,
    #[error("no {kind} phrase for metric {metric_id}")]
    MissingPhrase { kind: PhraseKind, metric_id: String },
    #[error("{path}: {message}")]
    PhraseFile { path: String, message: String },
    #[error("no document has summaries from both a large and a small generator")]
    NoSharedDocuments,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedBigram {
    pub bigram: (String, String),
    pub tfidf: f64,
    pub source_metric: String,
}

fn rank_bigrams(
    weights: impl IntoIterator<Item = ((String, String), f64)>,
    top_k: usize,
) -> Vec<((String, String), f64)> {
    let mut ranked: Vec<_> = weights.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    ranked
}

/// Top-`top_k` bigrams by tf·idf among summaries scoring at or above the
/// `percentile` of the score distribution. Ties are broken
/// lexicographically, so the output does not depend on input order.
pub fn mine_bigrams(
    summaries: &[(&str, f64)],
    percentile: f64,
    top_k: usize,
    metric_id: &str,
) -> Result<Vec<MinedBigram>, GamingError> {
    if summaries.len() < MIN_MINING_SUMMARIES {
        return Err(GamingError::TooFewSummaries(summaries.len()));
    }
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(GamingError::BadPercentile(percentile));
    }
    let scores: Vec<f64> = summaries.iter().map(|&(_, s)| s).collect();
    let threshold = stats::percentile(&scores, percentile)?;

    let mut df: HashMap<(String, String), usize> = HashMap::new();
    let mut tf: HashMap<(String, String), usize> = HashMap::new();
    let mut selected = 0usize;
    for &(summary, score) in summaries {
        let bigrams = text::sentence_bigrams(summary);
        let distinct: BTreeSet<&(String, String)> = bigrams.iter().collect();
        for b in distinct {
            *df.entry(b.clone()).or_default() += 1;
        }
        if score >= threshold {
            selected += 1;
            for b in bigrams {
                *tf.entry(b).or_default() += 1;
            }
        }
    }
    if selected == 0 || tf.is_empty() {
        return Err(GamingError::EmptySelection);
    }
    let n = summaries.len() as f64;
    let weights = tf.into_iter().map(|(b, count)| {
        let idf = (n / df[&b] as f64).ln();
        (b, count as f64 * idf)
    });
    Ok(rank_bigrams(weights, top_k)
        .into_iter()
        .map(|(bigram, tfidf)| MinedBigram { bigram, tfidf, source_metric: metric_id.to_string() })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedBigram {
    pub bigram: (String, String),
    pub total_tfidf: f64,
}

/// Union of per-metric lists ranked by summed tf·idf.
pub fn aggregate_across_metrics(
    per_metric: &BTreeMap<String, Vec<MinedBigram>>,
    top_k: usize,
) -> Vec<AggregatedBigram> {
    let mut totals: BTreeMap<(String, String), f64> = BTreeMap::new();
    for mined in per_metric.values() {
        for m in mined {
            *totals.entry(m.bigram.clone()).or_default() += m.tfidf;
        }
    }
    rank_bigrams(totals, top_k)
        .into_iter()
        .map(|(bigram, total_tfidf)| AggregatedBigram { bigram, total_tfidf })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhraseKind {
    Top,
    Assertion,
    Baseline,
    Qualifier,
}

impl PhraseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PhraseKind::Top => "top",
            PhraseKind::Assertion => "assertion",
            PhraseKind::Baseline => "baseline",
            PhraseKind::Qualifier => "qualifier",
        }
    }
}

impl fmt::Display for PhraseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhraseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top" => Ok(PhraseKind::Top),
            "assertion" => Ok(PhraseKind::Assertion),
            "baseline" => Ok(PhraseKind::Baseline),
            "qualifier" => Ok(PhraseKind::Qualifier),
            other => Err(format!("unknown phrase kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GamingPhrase {
    pub kind: PhraseKind,
    pub metric_id: Option<String>,
    pub text: String,
}

/// Phrases loaded from a `kind<TAB>metric_id-or-dash<TAB>text` file. Texts
/// are kept byte-for-byte, typos included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseSet {
    phrases: Vec<GamingPhrase>,
}

impl PhraseSet {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_PHRASES, "builtin").expect("bundled phrases parse")
    }

    pub fn load(path: &Path) -> Result<Self, GamingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GamingError::PhraseFile { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(content: &str, origin: &str) -> Result<Self, GamingError> {
        let mut phrases = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| GamingError::PhraseFile {
                path: origin.to_string(),
                message: format!("line {}: {message}", i + 1),
            };
            let mut cols = line.splitn(3, '\t');
            let (Some(kind), Some(metric), Some(text)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(err("expected kind<TAB>metric<TAB>text".into()));
            };
            if text.trim().is_empty() {
                return Err(err("empty phrase text".into()));
            }
            let kind: PhraseKind = kind.parse().map_err(err)?;
            let metric_id = (metric != "-").then(|| metric.to_string());
            if metric_id.is_some() && kind != PhraseKind::Assertion {
                return Err(err(format!("only assertion phrases are metric-specific, got {kind}")));
            }
            phrases.push(GamingPhrase { kind, metric_id, text: text.to_string() });
        }
        Ok(Self { phrases })
    }

    pub fn phrases(&self) -> &[GamingPhrase] {
        &self.phrases
    }

    /// The phrase of `kind` for `metric_id`: a metric-specific entry when
    /// one exists, otherwise the generic one.
    pub fn get(&self, kind: PhraseKind, metric_id: &str) -> Result<&GamingPhrase, GamingError> {
        let of_kind = || self.phrases.iter().filter(move |p| p.kind == kind);
        of_kind()
            .find(|p| p.metric_id.as_deref() == Some(metric_id))
            .or_else(|| of_kind().find(|p| p.metric_id.is_none()))
            .ok_or_else(|| GamingError::MissingPhrase { kind, metric_id: metric_id.to_string() })
    }
}

/// The six gaming variants of one summary for `target_metric`. Assertion
/// variants carry the metric and have id `{summary}::{kind}@{metric}`; the
/// others are metric-independent.
pub fn build_gamed_variants(
    summary: &SummaryRecord,
    phrases: &PhraseSet,
    target_metric: &str,
) -> Result<Vec<VariantRecord>, GamingError> {
    let top = &phrases.get(PhraseKind::Top, target_metric)?.text;
    let assertion = &phrases.get(PhraseKind::Assertion, target_metric)?.text;
    let baseline = &phrases.get(PhraseKind::Baseline, target_metric)?.text;
    let qualifier = &phrases.get(PhraseKind::Qualifier, target_metric)?.text;
    let base = &summary.summary_id;
    let suffixed = |p: &str| format!("{} {p}", summary.text);

    let specs = [
        (VariantKind::PhraseOnlyTop, top.clone(), false),
        (VariantKind::PhraseOnlyAssertion, assertion.clone(), true),
        (VariantKind::GamedTop, suffixed(top), false),
        (VariantKind::GamedAssertion, suffixed(assertion), true),
        (VariantKind::GamedBaseline, suffixed(baseline), false),
        (VariantKind::GamedQualifier, suffixed(qualifier), false),
    ];
    specs
        .into_iter()
        .map(|(kind, text, per_metric)| {
            let mut v = VariantRecord::new(base, kind, text, Provenance::Deterministic)?;
            if per_metric {
                v.variant_id = format!("{}@{target_metric}", v.variant_id);
                v.target_metric = Some(target_metric.to_string());
            }
            Ok(v)
        })
        .collect()
}

/// Mean pairwise delta per (metric, gaming kind). Phrase-only variants are
/// compared against their summary's score like the suffixed ones.
pub fn gaming_report(scores: &[MetricScore], variants: &[VariantRecord]) -> Result<Vec<DeltaRow>, GamingError> {
    let deltas = pairwise_deltas(scores, variants)?;
    let kept: Vec<_> = deltas.into_iter().filter(|d| d.kind.is_gaming()).collect();
    Ok(summarize_deltas(&kept))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorTier {
    Large,
    Small,
}

/// Gaming gain against the gain from a larger generator, for one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct GainComparison {
    pub metric_id: String,
    pub gaming_delta: f64,
    pub gaming_n: usize,
    /// Mean over shared documents of `mean(large) − mean(small)`.
    pub model_delta: f64,
    pub documents: usize,
    /// Tiered documents missing one of the two tiers.
    pub skipped_documents: usize,
    /// `gaming_delta / model_delta`; infinite when `model_delta` is zero.
    pub ratio: f64,
    pub ratio_infinite: bool,
}

/// Compares the mean delta of `gaming_kind` variants with the mean
/// large-minus-small generator delta on documents that have both tiers.
pub fn contextualize_vs_model_gains(
    corpus: &Corpus,
    scores: &[MetricScore],
    variants: &[VariantRecord],
    generator_tiers: &BTreeMap<String, GeneratorTier>,
    gaming_kind: VariantKind,
) -> Result<Vec<GainComparison>, GamingError> {
    let deltas = pairwise_deltas(scores, variants)?;
    let mut out = Vec::new();
    let metrics: BTreeSet<&str> = scores.iter().map(|s| s.metric_id.as_str()).collect();
    for metric in metrics {
        let by_summary: HashMap<&str, f64> =
            scores.iter().filter(|s| s.metric_id == metric).map(|s| (s.variant_id.as_str(), s.score)).collect();
        let mut per_doc: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for s in corpus.summaries() {
            let tier = s.generator.as_ref().and_then(|g| generator_tiers.get(g));
            let (Some(tier), Some(&score)) = (tier, by_summary.get(s.summary_id.as_str())) else { continue };
            let entry = per_doc.entry(&s.doc_id).or_default();
            match tier {
                GeneratorTier::Large => entry.0.push(score),
                GeneratorTier::Small => entry.1.push(score),
            }
        }
        let mut model_deltas = Vec::new();
        let mut skipped = 0;
        for (large, small) in per_doc.values() {
            match (stats::mean(large), stats::mean(small)) {
                (Some(l), Some(s)) => model_deltas.push(l - s),
                _ => skipped += 1,
            }
        }
        if model_deltas.is_empty() {
            return Err(GamingError::NoSharedDocuments);
        }
        if skipped > 0 {
            log::warn!("{metric}: skipped {skipped} documents missing a generator tier");
        }
        let gaming: Vec<f64> =
            deltas.iter().filter(|d| d.metric_id == metric && d.kind == gaming_kind).map(|d| d.delta).collect();
        let Some(gaming_delta) = stats::mean(&gaming) else {
            log::warn!("{metric}: no {gaming_kind} deltas");
            continue;
        };
        let model_delta = stats::mean(&model_deltas).expect("non-empty");
        let ratio_infinite = model_delta == 0.0;
        out.push(GainComparison {
            metric_id: metric.to_string(),
            gaming_delta,
            gaming_n: gaming.len(),
            model_delta,
            documents: model_deltas.len(),
            skipped_documents: skipped,
            ratio: if ratio_infinite { f64::INFINITY } else { gaming_delta / model_delta },
            ratio_infinite,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DocumentRecord, Domain};

    fn bigram(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    fn score(metric: &str, variant: &str, s: f64) -> MetricScore {
        MetricScore {
            metric_id: metric.into(),
            doc_id: "d".into(),
            variant_id: variant.into(),
            score: s,
            cached: false,
        }
    }

    fn summary(id: &str, doc: &str, text: &str, generator: Option<&str>) -> SummaryRecord {
        SummaryRecord {
            summary_id: id.into(),
            doc_id: doc.into(),
            text: text.into(),
            label: None,
            generator: generator.map(Into::into),
            split: None,
            corrected_of: None,
        }
    }

    #[test]
    fn identical_summaries_have_zero_idf() {
        let rows: Vec<(&str, f64)> = (0..10).map(|i| ("b a c", i as f64)).collect();
        let mined = mine_bigrams(&rows, 80.0, 5, "m").unwrap();
        assert_eq!(mined.len(), 2);
        assert!(mined.iter().all(|m| m.tfidf == 0.0));
        assert_eq!(mined[0].bigram, bigram("a", "c"));
        assert_eq!(mined[1].bigram, bigram("b", "a"));
    }

    #[test]
    fn mining_preconditions() {
        let rows: Vec<(&str, f64)> = (0..9).map(|_| ("a b", 1.0)).collect();
        assert!(matches!(mine_bigrams(&rows, 80.0, 5, "m"), Err(GamingError::TooFewSummaries(9))));
        let rows: Vec<(&str, f64)> = (0..10).map(|_| ("a b", 1.0)).collect();
        assert!(matches!(mine_bigrams(&rows, 100.0, 5, "m"), Err(GamingError::BadPercentile(_))));
        let rows: Vec<(&str, f64)> = (0..10).map(|_| ("word", 1.0)).collect();
        assert!(matches!(mine_bigrams(&rows, 80.0, 5, "m"), Err(GamingError::EmptySelection)));
    }

    #[test]
    fn aggregate_sums_across_metrics() {
        let m = |a: &str, b: &str, t: f64, metric: &str| MinedBigram {
            bigram: bigram(a, b),
            tfidf: t,
            source_metric: metric.into(),
        };
        let mut per = BTreeMap::new();
        per.insert("m1".to_string(), vec![m("x", "y", 1.0, "m1"), m("p", "q", 2.5, "m1")]);
        per.insert("m2".to_string(), vec![m("x", "y", 2.0, "m2")]);
        let agg = aggregate_across_metrics(&per, 10);
        assert_eq!(agg[0].bigram, bigram("x", "y"));
        assert_eq!(agg[0].total_tfidf, 3.0);
        assert_eq!(agg[1].total_tfidf, 2.5);
        assert_eq!(aggregate_across_metrics(&per, 1).len(), 1);
    }

    #[test]
    fn builtin_phrases_match_tables() {
        let p = PhraseSet::builtin();
        assert_eq!(p.get(PhraseKind::Top, "any").unwrap().text, "The document discusses");
        assert_eq!(
            p.get(PhraseKind::Assertion, "alignscore").unwrap().text,
            "The summary entails the information the document discusses."
        );
        assert_eq!(
            p.get(PhraseKind::Assertion, "minicheck").unwrap().text,
            "TThe claim entails the information the document discusses."
        );
        assert_eq!(
            p.get(PhraseKind::Baseline, "x").unwrap().text,
            "In any case, understanding complex topics requires a multifaceted approach."
        );
        assert_eq!(
            p.get(PhraseKind::Qualifier, "x").unwrap().text,
            "This summary reflects one possible understanding, though interpretations may differ."
        );
        assert!(p.get(PhraseKind::Assertion, "mock-lexical").unwrap().metric_id.is_none());
    }

    #[test]
    fn phrase_file_errors() {
        assert!(PhraseSet::parse("top\t-\t  \n", "t").is_err());
        assert!(PhraseSet::parse("bogus\t-\tx\n", "t").is_err());
        assert!(PhraseSet::parse("top\tm\tx\n", "t").is_err());
        let only_top = PhraseSet::parse("top\t-\tThe document discusses\n", "t").unwrap();
        assert!(matches!(
            only_top.get(PhraseKind::Assertion, "m"),
            Err(GamingError::MissingPhrase { kind: PhraseKind::Assertion, .. })
        ));
    }

    #[test]
    fn gamed_variants_shape() {
        let s = summary("s1", "d", "S.", None);
        let v = build_gamed_variants(&s, &PhraseSet::builtin(), "minicheck").unwrap();
        assert_eq!(v.len(), 6);
        let by_kind = |k| v.iter().find(|x| x.kind == k).unwrap();
        assert_eq!(by_kind(VariantKind::GamedTop).text, "S. The document discusses");
        assert_eq!(by_kind(VariantKind::GamedTop).variant_id, "s1::gamed_top");
        let a = by_kind(VariantKind::GamedAssertion);
        assert_eq!(a.variant_id, "s1::gamed_assertion@minicheck");
        assert_eq!(a.target_metric.as_deref(), Some("minicheck"));
        assert!(a.text.starts_with("S. TThe claim"));
        for k in [VariantKind::PhraseOnlyTop, VariantKind::PhraseOnlyAssertion] {
            assert!(!by_kind(k).text.contains("S."));
        }
        for x in &v {
            assert!(x.kind.is_gaming());
            if !matches!(x.kind, VariantKind::PhraseOnlyTop | VariantKind::PhraseOnlyAssertion) {
                assert!(x.text.starts_with("S. "));
            }
        }
    }

    #[test]
    fn gaming_report_examples() {
        let s = summary("s", "d", "Base.", None);
        let variants = build_gamed_variants(&s, &PhraseSet::builtin(), "alignscore").unwrap();
        let assertion_id = &variants.iter().find(|v| v.kind == VariantKind::GamedAssertion).unwrap().variant_id;
        let scores = [score("alignscore", "s", 0.33), score("alignscore", assertion_id, 0.76)];
        let rows = gaming_report(&scores, &variants).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean - 0.43).abs() < 1e-12);
        assert!(gaming_report(&[score("alignscore", "s", 0.33)], &variants).unwrap().is_empty());
    }

    fn tiered_corpus() -> Corpus {
        let doc = |id: &str| DocumentRecord {
            doc_id: id.into(),
            text: "Some source.".into(),
            dataset: "x".into(),
            domain: Domain::News,
        };
        Corpus::new(
            vec![doc("d1"), doc("d2")],
            vec![
                summary("big1", "d1", "A.", Some("big")),
                summary("small1", "d1", "B.", Some("small")),
                summary("big2", "d2", "C.", Some("big")),
            ],
        )
        .unwrap()
    }

    #[test]
    fn contextualize_ratio() {
        let corpus = tiered_corpus();
        let tiers =
            BTreeMap::from([("big".to_string(), GeneratorTier::Large), ("small".to_string(), GeneratorTier::Small)]);
        let v = VariantRecord::new("small1", VariantKind::GamedAssertion, "B. x".into(), Provenance::Deterministic)
            .unwrap();
        let scores = [
            score("m", "big1", 0.55),
            score("m", "small1", 0.5),
            score("m", "big2", 0.9),
            score("m", &v.variant_id, 0.7),
        ];
        let rows = contextualize_vs_model_gains(
            &corpus,
            &scores,
            std::slice::from_ref(&v),
            &tiers,
            VariantKind::GamedAssertion,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].ratio - 4.0).abs() < 1e-9);
        assert_eq!(rows[0].documents, 1);
        assert_eq!(rows[0].skipped_documents, 1);

        let flat = [score("m", "big1", 0.5), score("m", "small1", 0.5), score("m", &v.variant_id, 0.7)];
        let rows =
            contextualize_vs_model_gains(&corpus, &flat, std::slice::from_ref(&v), &tiers, VariantKind::GamedAssertion)
                .unwrap();
        assert!(rows[0].ratio_infinite && rows[0].ratio.is_infinite());

        let only_large = BTreeMap::from([("big".to_string(), GeneratorTier::Large)]);
        assert!(matches!(
            contextualize_vs_model_gains(&corpus, &scores, &[v], &only_large, VariantKind::GamedAssertion),
            Err(GamingError::NoSharedDocuments)
        ));
    }
}
