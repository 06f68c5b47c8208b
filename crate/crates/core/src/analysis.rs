//! Report generators: AUC by domain, metric replication, feature–metric
//! correlation and the source-context ablation, plus conversions of the
//! perturbation and gaming delta tables into the shared report format.
//!
//! Every report is a list of rows `(analysis, metric_id, domain, statistic,
//! value, n)`, written as CSV with that fixed column order and mirrored as
//! JSON.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label, Split, SummaryRecord};
use crate::features::FeatureVector;
use crate::gaming::GainComparison;
use crate::gateway::{Gateway, GatewayError, MetricScore, ScoreRequest, CHATGPT_CONTEXT_FREE, CHATGPT_DA};
use crate::io::write_atomic;
use crate::network::Objective;
use crate::perturbation::DeltaRow;
use crate::shallow_model::{train, ModelError, NetworkConfig, TrainedModel, TrainingRow};
use crate::stats::{self, StatsError};

/// Pseudo-metric id under which the shallow classifier is reported.
pub const SHALLOW_METRIC: &str = "shallow-mlp";
pub const ALL_DOMAINS: &str = "all";
pub const HISTOGRAM_BINS: usize = 10;

/// Features keyed by summary id.
pub type FeatureTable = BTreeMap<String, FeatureVector>;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("report row {analysis}/{metric_id}/{domain}/{statistic}: value {value} with n = {n}")]
    InvalidRow { analysis: String, metric_id: String, domain: String, statistic: String, value: f64, n: usize },
    #[error("shallow model was trained on {0}, which is not a dev-split dataset")]
    TrainedOutsideDev(String),
    #[error("shallow model records no training datasets")]
    UnknownTrainingData,
    #[error("no features for summary {0}")]
    MissingFeatures(String),
    #[error("{split:?} split has {got} usable rows for {metric_id}, need at least {needed}")]
    TooFewRows { metric_id: String, split: Split, needed: usize, got: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub analysis: String,
    pub metric_id: String,
    pub domain: String,
    pub statistic: String,
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

pub const CSV_HEADER: &str = "analysis,metric_id,domain,statistic,value,n";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl EvalReport {
    /// Appends a row; values must be finite and `n ≥ 1`.
    pub fn push(
        &mut self,
        analysis: &str,
        metric_id: &str,
        domain: &str,
        statistic: &str,
        value: f64,
        n: usize,
    ) -> Result<(), AnalysisError> {
        let row = ReportRow {
            analysis: analysis.into(),
            metric_id: metric_id.into(),
            domain: domain.into(),
            statistic: statistic.into(),
            value,
            n,
        };
        if !value.is_finite() || n == 0 {
            return Err(AnalysisError::InvalidRow {
                analysis: row.analysis,
                metric_id: row.metric_id,
                domain: row.domain,
                statistic: row.statistic,
                value,
                n,
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn find(&self, metric_id: &str, domain: &str, statistic: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.metric_id == metric_id && r.domain == domain && r.statistic == statistic)
    }

    /// CSV with a fixed header; floats use the shortest representation that
    /// round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                csv_field(&r.analysis),
                csv_field(&r.metric_id),
                csv_field(&r.domain),
                csv_field(&r.statistic),
                r.value,
                r.n
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `<name>.csv` and `<name>.json` atomically into `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> std::io::Result<()> {
        write_atomic(&dir.join(format!("{name}.csv")), self.to_csv().as_bytes())?;
        write_atomic(&dir.join(format!("{name}.json")), self.to_json().as_bytes())
    }
}

fn split_datasets(corpus: &Corpus, split: Split) -> BTreeSet<String> {
    corpus.summaries_in(split).map(|s| corpus.document_of(s).dataset.clone()).collect()
}

fn features_of<'a>(features: &'a FeatureTable, s: &SummaryRecord) -> Result<&'a FeatureVector, AnalysisError> {
    features.get(&s.summary_id).ok_or_else(|| AnalysisError::MissingFeatures(s.summary_id.clone()))
}

/// Trains the shallow classifier on labeled dev-split summaries
/// (consistent = 1) and records the datasets it saw.
pub fn train_shallow_classifier(
    corpus: &Corpus,
    features: &FeatureTable,
    config: &NetworkConfig,
) -> Result<TrainedModel<f64>, AnalysisError> {
    let mut rows = Vec::new();
    let mut datasets = BTreeSet::new();
    for s in corpus.summaries_in(Split::Dev) {
        let Some(label) = s.label else { continue };
        rows.push(TrainingRow {
            features: *features_of(features, s)?,
            target: if label == Label::Consistent { 1.0 } else { 0.0 },
        });
        datasets.insert(corpus.document_of(s).dataset.clone());
    }
    let config = NetworkConfig { objective: Objective::BinaryCrossEntropy, ..config.clone() };
    Ok(train::<f64>(&rows, &config)?.with_training_datasets(datasets))
}

fn check_dev_only(corpus: &Corpus, model: &TrainedModel<f64>) -> Result<(), AnalysisError> {
    if model.training_datasets.is_empty() {
        return Err(AnalysisError::UnknownTrainingData);
    }
    let dev = split_datasets(corpus, Split::Dev);
    match model.training_datasets.iter().find(|d| !dev.contains(*d)) {
        Some(d) => Err(AnalysisError::TrainedOutsideDev(d.clone())),
        None => Ok(()),
    }
}

/// Per-(metric, domain) AUC over labeled test-split summaries, plus an
/// `all` row per metric. The shallow model, when given, is scored as the
/// pseudo-metric [`SHALLOW_METRIC`] and must have been trained on dev-split
/// datasets only. Groups with a single class are omitted with a warning.
pub fn auc_by_domain(
    corpus: &Corpus,
    scores: &[MetricScore],
    shallow: Option<(&TrainedModel<f64>, &FeatureTable)>,
) -> Result<EvalReport, AnalysisError> {
    let mut by_metric: BTreeMap<String, HashMap<&str, f64>> = BTreeMap::new();
    for s in scores {
        by_metric.entry(s.metric_id.clone()).or_default().insert(&s.variant_id, s.score);
    }
    let test: Vec<&SummaryRecord> = corpus.summaries_in(Split::Test).filter(|s| s.label.is_some()).collect();
    if let Some((model, features)) = shallow {
        check_dev_only(corpus, model)?;
        let mut preds = HashMap::new();
        for s in &test {
            preds.insert(s.summary_id.as_str(), model.predict(features_of(features, s)?)?);
        }
        by_metric.insert(SHALLOW_METRIC.to_string(), preds);
    }

    let mut report = EvalReport::default();
    for (metric, index) in &by_metric {
        let mut groups: BTreeMap<&str, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
        for s in &test {
            let Some(&score) = index.get(s.summary_id.as_str()) else { continue };
            let positive = s.label == Some(Label::Consistent);
            for domain in [corpus.document_of(s).domain.as_str(), ALL_DOMAINS] {
                let g = groups.entry(domain).or_default();
                g.0.push(score);
                g.1.push(positive);
            }
        }
        for (domain, (xs, labels)) in groups {
            match stats::roc_auc(&xs, &labels) {
                Ok(auc) => report.push("auc", metric, domain, "auc", auc, xs.len())?,
                Err(StatsError::SingleClass) => log::warn!("auc: {metric}/{domain} has a single class; row omitted"),
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct Replication {
    pub metric_id: String,
    pub model: TrainedModel<f64>,
    pub spearman: f64,
    pub n_train: usize,
    pub n_test: usize,
}

impl Replication {
    pub fn to_report(&self) -> Result<EvalReport, AnalysisError> {
        let mut r = EvalReport::default();
        r.push("replicate", &self.metric_id, ALL_DOMAINS, "spearman", self.spearman, self.n_test)?;
        r.push("replicate", &self.metric_id, ALL_DOMAINS, "train_rows", self.n_train as f64, self.n_train)?;
        Ok(r)
    }
}

fn scored_rows<'a>(
    corpus: &'a Corpus,
    split: Split,
    index: &HashMap<&str, f64>,
    features: &FeatureTable,
) -> Result<Vec<(&'a SummaryRecord, FeatureVector, f64)>, AnalysisError> {
    let mut rows = Vec::new();
    for s in corpus.summaries_in(split) {
        if let Some(&score) = index.get(s.summary_id.as_str()) {
            rows.push((s, *features_of(features, s)?, score));
        }
    }
    Ok(rows)
}

fn check_not_constant(xs: &[f64]) -> Result<(), StatsError> {
    match xs.first() {
        Some(&x0) if xs.iter().all(|&x| x == x0) => Err(StatsError::ConstantSeries),
        _ => Ok(()),
    }
}

/// Trains a regression-mode shallow model on dev features → `metric_id`
/// scores and reports the Spearman correlation of its predictions with the
/// actual test scores.
pub fn replicate_metric(
    corpus: &Corpus,
    features: &FeatureTable,
    scores: &[MetricScore],
    metric_id: &str,
    config: &NetworkConfig,
) -> Result<Replication, AnalysisError> {
    let index: HashMap<&str, f64> =
        scores.iter().filter(|s| s.metric_id == metric_id).map(|s| (s.variant_id.as_str(), s.score)).collect();
    let dev = scored_rows(corpus, Split::Dev, &index, features)?;
    let test = scored_rows(corpus, Split::Test, &index, features)?;
    for (split, rows, needed) in [(Split::Dev, &dev, 2), (Split::Test, &test, 3)] {
        if rows.len() < needed {
            return Err(AnalysisError::TooFewRows { metric_id: metric_id.into(), split, needed, got: rows.len() });
        }
    }
    let dev_targets: Vec<f64> = dev.iter().map(|r| r.2).collect();
    let actual: Vec<f64> = test.iter().map(|r| r.2).collect();
    check_not_constant(&dev_targets)?;
    check_not_constant(&actual)?;

    let rows: Vec<TrainingRow> = dev.iter().map(|r| TrainingRow { features: r.1, target: r.2 }).collect();
    let config = NetworkConfig { objective: Objective::SquaredError, ..config.clone() };
    let datasets = dev.iter().map(|r| corpus.document_of(r.0).dataset.clone());
    let model = train::<f64>(&rows, &config)?.with_training_datasets(datasets);
    let predicted = test.iter().map(|r| model.predict(&r.1)).collect::<Result<Vec<f64>, _>>()?;
    let spearman = stats::spearman(&predicted, &actual)?;
    Ok(Replication { metric_id: metric_id.into(), model, spearman, n_train: dev.len(), n_test: test.len() })
}

/// Spearman correlation of each shallow feature with each metric over the
/// test split. Constant columns are omitted with a warning.
pub fn feature_metric_correlation(
    corpus: &Corpus,
    features: &FeatureTable,
    scores: &[MetricScore],
) -> Result<EvalReport, AnalysisError> {
    let metrics: BTreeSet<&str> = scores.iter().map(|s| s.metric_id.as_str()).collect();
    let mut report = EvalReport::default();
    for metric in metrics {
        let index: HashMap<&str, f64> =
            scores.iter().filter(|s| s.metric_id == metric).map(|s| (s.variant_id.as_str(), s.score)).collect();
        let rows = scored_rows(corpus, Split::Test, &index, features)?;
        let ys: Vec<f64> = rows.iter().map(|r| r.2).collect();
        for (j, name) in FeatureVector::NAMES.iter().enumerate() {
            let xs: Vec<f64> = rows.iter().map(|r| r.1.to_array()[j]).collect();
            match stats::spearman(&xs, &ys) {
                Ok(rho) => report.push("featcorr", metric, ALL_DOMAINS, name, rho, xs.len())?,
                Err(e @ (StatsError::ConstantSeries | StatsError::TooFew { .. })) => {
                    log::warn!("featcorr: {metric} vs {name} omitted: {e}")
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(report)
}

/// Bin counts over `[0, 1]` in [`HISTOGRAM_BINS`] equal-width bins; the last
/// bin is closed.
pub fn histogram(scores: &[f64]) -> [usize; HISTOGRAM_BINS] {
    let mut bins = [0; HISTOGRAM_BINS];
    for &s in scores {
        let i = ((s * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1);
        bins[i] += 1;
    }
    bins
}

/// Scores every summary with and without its source document through the
/// gateway's [`CHATGPT_DA`] and [`CHATGPT_CONTEXT_FREE`] backends; reports
/// per-domain histograms for both conditions and the mean of
/// `with − without`.
pub fn context_ablation(corpus: &Corpus, gateway: &Gateway) -> Result<EvalReport, AnalysisError> {
    let mut per_domain: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in corpus.summaries() {
        let doc = corpus.document_of(s);
        let req =
            ScoreRequest { doc_id: &doc.doc_id, variant_id: &s.summary_id, document: &doc.text, candidate: &s.text };
        let with = gateway.score(CHATGPT_DA, &req)?.score;
        let without = gateway.score(CHATGPT_CONTEXT_FREE, &req)?.score;
        for domain in [doc.domain.as_str(), ALL_DOMAINS] {
            let e = per_domain.entry(domain).or_default();
            e.0.push(with);
            e.1.push(without);
        }
    }
    let mut report = EvalReport::default();
    for (domain, (with, without)) in &per_domain {
        let n = with.len();
        for (metric, xs) in [(CHATGPT_DA, with), (CHATGPT_CONTEXT_FREE, without)] {
            for (i, count) in histogram(xs).iter().enumerate() {
                report.push("ablation", metric, domain, &format!("bin_{i:02}"), *count as f64, n)?;
            }
            report.push("ablation", metric, domain, "mean", stats::mean(xs).expect("non-empty"), n)?;
        }
        let diffs: Vec<f64> = with.iter().zip(without).map(|(a, b)| a - b).collect();
        report.push(
            "ablation",
            CHATGPT_DA,
            domain,
            "mean_diff_with_minus_without",
            stats::mean(&diffs).expect("non-empty"),
            n,
        )?;
    }
    Ok(report)
}

/// Delta table (sensitivity or gaming) as report rows.
pub fn delta_report(analysis: &str, rows: &[DeltaRow]) -> Result<EvalReport, AnalysisError> {
    let mut report = EvalReport::default();
    for r in rows {
        report.push(analysis, &r.metric_id, ALL_DOMAINS, &format!("{}:mean_delta", r.kind), r.mean, r.n)?;
        report.push(analysis, &r.metric_id, ALL_DOMAINS, &format!("{}:std_delta", r.kind), r.std, r.n)?;
    }
    Ok(report)
}

/// Gaming-versus-model gain comparison as report rows. An infinite ratio
/// is reported through the `ratio_infinite` flag row only.
pub fn gains_report(rows: &[GainComparison]) -> Result<EvalReport, AnalysisError> {
    let mut report = EvalReport::default();
    for r in rows {
        let m = &r.metric_id;
        report.push("contextualize", m, ALL_DOMAINS, "gaming_delta", r.gaming_delta, r.gaming_n)?;
        report.push("contextualize", m, ALL_DOMAINS, "model_delta", r.model_delta, r.documents)?;
        if !r.ratio_infinite {
            report.push("contextualize", m, ALL_DOMAINS, "ratio", r.ratio, r.documents)?;
        }
        report.push("contextualize", m, ALL_DOMAINS, "ratio_infinite", r.ratio_infinite as u8 as f64, r.documents)?;
        report.push("contextualize", m, ALL_DOMAINS, "skipped_documents", r.skipped_documents as f64, r.documents)?;
    }
    Ok(report)
}
