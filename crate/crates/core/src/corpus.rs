//! Benchmark ingestion into one record schema and dataset-disjoint splits.
//!
//! The unified corpus file is UTF-8 JSON lines. Each line is a document
//! (`kind: "doc"`) or a summary (`kind: "summ"`):
//!
//! ```text
//! {"kind":"doc","id":"d1","text":"...","dataset":"xsum","domain":"news"}
//! {"kind":"summ","id":"s1","doc_id":"d1","text":"...","dataset":"xsum","label":"inconsistent","generator":"bart"}
//! {"kind":"summ","id":"s1c","doc_id":"d1","text":"...","dataset":"xsum","label":"consistent","corrected_of":"s1"}
//! ```
//!
//! Two thin import shims map other layouts onto the same records:
//! [`FormatTag::ClaimPairs`] (one document/claim/label row per line) and
//! [`FormatTag::CorrectionPairs`] (an inconsistent summary and its human
//! correction per line).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::sha256_hex;
use crate::text::nfc;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("summary {summary_id} references missing document {doc_id}")]
    DanglingDocument { summary_id: String, doc_id: String },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("record {0} has empty text")]
    EmptyText(String),
    #[error("summary {summary_id}: corrected_of target {target} {reason}")]
    BadCorrection { summary_id: String, target: String, reason: &'static str },
    #[error("summary {summary_id} declares dataset {declared} but its document belongs to {actual}")]
    DatasetMismatch { summary_id: String, declared: String, actual: String },
    #[error("dataset {0} is assigned to both dev and test")]
    OverlappingSplit(String),
    #[error("dataset {0} is not assigned to dev or test")]
    UnassignedDataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    News,
    Dialogue,
    Qfs,
    #[serde(other)]
    Other,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::News => "news",
            Domain::Dialogue => "dialogue",
            Domain::Qfs => "qfs",
            Domain::Other => "other",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub text: String,
    pub dataset: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRecord {
    pub summary_id: String,
    pub doc_id: String,
    pub text: String,
    pub label: Option<Label>,
    pub generator: Option<String>,
    /// Unset until [`split_by_dataset`] runs.
    pub split: Option<Split>,
    pub corrected_of: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatTag {
    Unified,
    ClaimPairs,
    CorrectionPairs,
}

impl FromStr for FormatTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unified" => Ok(Self::Unified),
            "claim-pairs" => Ok(Self::ClaimPairs),
            "correction-pairs" => Ok(Self::CorrectionPairs),
            other => Err(format!("unknown corpus format {other:?} (unified, claim-pairs, correction-pairs)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IngestOptions {
    /// Numeric labels at or above this value become `consistent`, the rest
    /// `inconsistent`. Numeric labels without a threshold are rejected.
    pub label_threshold: Option<f64>,
}

/// Immutable, validated collection of documents and summaries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    documents: Vec<DocumentRecord>,
    summaries: Vec<SummaryRecord>,
    doc_index: HashMap<String, usize>,
    summary_index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds and validates a corpus.
    pub fn new(documents: Vec<DocumentRecord>, summaries: Vec<SummaryRecord>) -> Result<Self, CorpusError> {
        let mut doc_index = HashMap::new();
        for (i, d) in documents.iter().enumerate() {
            if d.text.trim().is_empty() {
                return Err(CorpusError::EmptyText(d.doc_id.clone()));
            }
            if doc_index.insert(d.doc_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(d.doc_id.clone()));
            }
        }
        let mut summary_index = HashMap::new();
        for (i, s) in summaries.iter().enumerate() {
            if s.text.trim().is_empty() {
                return Err(CorpusError::EmptyText(s.summary_id.clone()));
            }
            if doc_index.contains_key(&s.summary_id) || summary_index.insert(s.summary_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(s.summary_id.clone()));
            }
            if !doc_index.contains_key(&s.doc_id) {
                return Err(CorpusError::DanglingDocument {
                    summary_id: s.summary_id.clone(),
                    doc_id: s.doc_id.clone(),
                });
            }
        }
        for s in &summaries {
            if let Some(target) = &s.corrected_of {
                let bad = |reason| CorpusError::BadCorrection {
                    summary_id: s.summary_id.clone(),
                    target: target.clone(),
                    reason,
                };
                let t = summary_index.get(target).map(|&i| &summaries[i]).ok_or_else(|| bad("does not exist"))?;
                if t.label != Some(Label::Inconsistent) {
                    return Err(bad("is not labeled inconsistent"));
                }
                if t.doc_id != s.doc_id {
                    return Err(bad("belongs to a different document"));
                }
            }
        }
        Ok(Self { documents, summaries, doc_index, summary_index })
    }

    pub fn documents(&self) -> &[DocumentRecord] {
        &self.documents
    }

    pub fn summaries(&self) -> &[SummaryRecord] {
        &self.summaries
    }

    pub fn document(&self, doc_id: &str) -> Option<&DocumentRecord> {
        self.doc_index.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn summary(&self, summary_id: &str) -> Option<&SummaryRecord> {
        self.summary_index.get(summary_id).map(|&i| &self.summaries[i])
    }

    /// Document of a summary. Summaries are validated on construction, so
    /// this only panics on a summary from another corpus.
    pub fn document_of(&self, summary: &SummaryRecord) -> &DocumentRecord {
        self.document(&summary.doc_id).expect("summary document resolves")
    }

    pub fn datasets(&self) -> BTreeSet<String> {
        self.documents.iter().map(|d| d.dataset.clone()).collect()
    }

    /// Summary counts per dataset.
    pub fn summaries_per_dataset(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for s in &self.summaries {
            *out.entry(self.document_of(s).dataset.clone()).or_default() += 1;
        }
        out
    }

    pub fn summaries_in(&self, split: Split) -> impl Iterator<Item = &SummaryRecord> {
        self.summaries.iter().filter(move |s| s.split == Some(split))
    }

    /// Serializes to the unified line format; [`ingest_str`] reads it back
    /// to an equal corpus.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.documents {
            let rec = RawRecord {
                kind: RecordKind::Doc,
                id: d.doc_id.clone(),
                text: d.text.clone(),
                dataset: Some(d.dataset.clone()),
                domain: Some(d.domain),
                ..RawRecord::default()
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        for s in &self.summaries {
            let rec = RawRecord {
                kind: RecordKind::Summ,
                id: s.summary_id.clone(),
                text: s.text.clone(),
                dataset: Some(self.document_of(s).dataset.clone()),
                doc_id: Some(s.doc_id.clone()),
                label: s.label.map(RawLabel::Named),
                generator: s.generator.clone(),
                corrected_of: s.corrected_of.clone(),
                split: s.split,
                ..RawRecord::default()
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        crate::io::write_atomic(path, self.to_jsonl().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RecordKind {
    #[default]
    Doc,
    Summ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawLabel {
    Named(Label),
    Numeric(f64),
    Other(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    kind: RecordKind,
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<Domain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    doc_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<RawLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corrected_of: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

#[derive(Debug, Deserialize)]
struct ClaimPairRow {
    dataset: String,
    doc: String,
    claim: String,
    label: RawLabel,
    #[serde(default)]
    domain: Option<Domain>,
    #[serde(default)]
    generator: Option<String>,
}

#[derive(Debug, Deserialize)]
struct CorrectionPairRow {
    id: String,
    dataset: String,
    document: String,
    summary: String,
    corrected: String,
    #[serde(default)]
    domain: Option<Domain>,
    #[serde(default)]
    generator: Option<String>,
}

fn binarize(label: RawLabel, line: usize, opts: &IngestOptions) -> Result<Label, CorpusError> {
    match label {
        RawLabel::Named(l) => Ok(l),
        RawLabel::Numeric(v) => match opts.label_threshold {
            Some(t) if v.is_finite() => Ok(if v >= t { Label::Consistent } else { Label::Inconsistent }),
            Some(_) => Err(CorpusError::Parse { line, message: "non-finite numeric label".into() }),
            None => {
                Err(CorpusError::Parse { line, message: format!("numeric label {v} needs a binarization threshold") })
            }
        },
        RawLabel::Other(s) => {
            Err(CorpusError::Parse { line, message: format!("label {s:?} is neither consistent nor inconsistent") })
        }
    }
}

pub fn ingest(path: &Path, format: FormatTag, opts: &IngestOptions) -> Result<Corpus, CorpusError> {
    let content = std::fs::read_to_string(path)?;
    ingest_str(&content, format, opts)
}

/// Parses corpus text. Line numbers in errors are 1-based; blank lines are
/// skipped.
pub fn ingest_str(content: &str, format: FormatTag, opts: &IngestOptions) -> Result<Corpus, CorpusError> {
    let lines = content.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
    match format {
        FormatTag::Unified => ingest_unified(lines, opts),
        FormatTag::ClaimPairs => ingest_claim_pairs(lines, opts),
        FormatTag::CorrectionPairs => ingest_correction_pairs(lines),
    }
}

fn parse_line<'a, T: Deserialize<'a>>(line: usize, text: &'a str) -> Result<T, CorpusError> {
    serde_json::from_str(text).map_err(|e| CorpusError::Parse { line, message: e.to_string() })
}

fn ingest_unified<'a>(
    lines: impl Iterator<Item = (usize, &'a str)>,
    opts: &IngestOptions,
) -> Result<Corpus, CorpusError> {
    let mut docs = Vec::new();
    let mut summaries = Vec::new();
    let mut declared: Vec<(usize, Option<String>)> = Vec::new();
    for (line, text) in lines {
        let rec: RawRecord = parse_line(line, text)?;
        match rec.kind {
            RecordKind::Doc => {
                let dataset =
                    rec.dataset.ok_or_else(|| CorpusError::Parse { line, message: "document lacks dataset".into() })?;
                docs.push(DocumentRecord {
                    doc_id: rec.id,
                    text: nfc(&rec.text),
                    dataset,
                    domain: rec.domain.unwrap_or(Domain::Other),
                });
            }
            RecordKind::Summ => {
                let doc_id =
                    rec.doc_id.ok_or_else(|| CorpusError::Parse { line, message: "summary lacks doc_id".into() })?;
                let label = rec.label.map(|l| binarize(l, line, opts)).transpose()?;
                declared.push((summaries.len(), rec.dataset));
                summaries.push(SummaryRecord {
                    summary_id: rec.id,
                    doc_id,
                    text: nfc(&rec.text),
                    label,
                    generator: rec.generator,
                    split: rec.split,
                    corrected_of: rec.corrected_of,
                });
            }
        }
    }
    let corpus = Corpus::new(docs, summaries)?;
    for (i, dataset) in declared {
        let s = &corpus.summaries[i];
        if let Some(d) = dataset {
            let actual = &corpus.document_of(s).dataset;
            if &d != actual {
                return Err(CorpusError::DatasetMismatch {
                    summary_id: s.summary_id.clone(),
                    declared: d,
                    actual: actual.clone(),
                });
            }
        }
    }
    Ok(corpus)
}

fn content_doc_id(dataset: &str, text: &str) -> String {
    format!("d-{}", &sha256_hex(format!("{dataset}\u{0}{text}"))[..16])
}

fn ingest_claim_pairs<'a>(
    lines: impl Iterator<Item = (usize, &'a str)>,
    opts: &IngestOptions,
) -> Result<Corpus, CorpusError> {
    let mut docs: Vec<DocumentRecord> = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut summaries = Vec::new();
    for (n, (line, text)) in lines.enumerate() {
        let row: ClaimPairRow = parse_line(line, text)?;
        let doc_text = nfc(&row.doc);
        let doc_id = content_doc_id(&row.dataset, &doc_text);
        if seen.insert(doc_id.clone(), ()).is_none() {
            docs.push(DocumentRecord {
                doc_id: doc_id.clone(),
                text: doc_text,
                dataset: row.dataset.clone(),
                domain: row.domain.unwrap_or(Domain::Other),
            });
        }
        summaries.push(SummaryRecord {
            summary_id: format!("{}-{}", row.dataset, n + 1),
            doc_id,
            text: nfc(&row.claim),
            label: Some(binarize(row.label, line, opts)?),
            generator: row.generator,
            split: None,
            corrected_of: None,
        });
    }
    Corpus::new(docs, summaries)
}

fn ingest_correction_pairs<'a>(lines: impl Iterator<Item = (usize, &'a str)>) -> Result<Corpus, CorpusError> {
    let mut docs = Vec::new();
    let mut summaries = Vec::new();
    for (line, text) in lines {
        let row: CorrectionPairRow = parse_line(line, text)?;
        let doc_id = format!("{}-doc", row.id);
        docs.push(DocumentRecord {
            doc_id: doc_id.clone(),
            text: nfc(&row.document),
            dataset: row.dataset,
            domain: row.domain.unwrap_or(Domain::Other),
        });
        summaries.push(SummaryRecord {
            summary_id: row.id.clone(),
            doc_id: doc_id.clone(),
            text: nfc(&row.summary),
            label: Some(Label::Inconsistent),
            generator: row.generator,
            split: None,
            corrected_of: None,
        });
        summaries.push(SummaryRecord {
            summary_id: format!("{}-corrected", row.id),
            doc_id,
            text: nfc(&row.corrected),
            label: Some(Label::Consistent),
            generator: None,
            split: None,
            corrected_of: Some(row.id),
        });
    }
    Corpus::new(docs, summaries)
}

/// Dataset-level dev/test assignment.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub dev_datasets: BTreeSet<String>,
    pub test_datasets: BTreeSet<String>,
}

impl CorpusSplit {
    pub fn new(
        dev: impl IntoIterator<Item = String>,
        test: impl IntoIterator<Item = String>,
    ) -> Result<Self, CorpusError> {
        let split = Self { dev_datasets: dev.into_iter().collect(), test_datasets: test.into_iter().collect() };
        split.check_disjoint()?;
        Ok(split)
    }

    /// Explicit dev list; every other dataset goes to test.
    pub fn with_dev(datasets: &BTreeSet<String>, dev: &BTreeSet<String>) -> Result<Self, CorpusError> {
        if let Some(missing) = dev.iter().find(|d| !datasets.contains(*d)) {
            return Err(CorpusError::UnassignedDataset(missing.clone()));
        }
        Ok(Self { dev_datasets: dev.clone(), test_datasets: datasets.difference(dev).cloned().collect() })
    }

    /// Seeded random assignment of `dev_count` datasets to dev.
    pub fn random(datasets: &BTreeSet<String>, dev_count: usize, seed: u64) -> Self {
        let mut names: Vec<String> = datasets.iter().cloned().collect();
        names.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let dev_count = dev_count.min(names.len());
        let test = names.split_off(dev_count);
        Self { dev_datasets: names.into_iter().collect(), test_datasets: test.into_iter().collect() }
    }

    fn check_disjoint(&self) -> Result<(), CorpusError> {
        match self.dev_datasets.intersection(&self.test_datasets).next() {
            Some(d) => Err(CorpusError::OverlappingSplit(d.clone())),
            None => Ok(()),
        }
    }

    pub fn side_of(&self, dataset: &str) -> Option<Split> {
        if self.dev_datasets.contains(dataset) {
            Some(Split::Dev)
        } else if self.test_datasets.contains(dataset) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

/// Returns a copy of `corpus` with every summary's split set from its
/// document's dataset.
pub fn split_by_dataset(corpus: &Corpus, assignment: &CorpusSplit) -> Result<Corpus, CorpusError> {
    assignment.check_disjoint()?;
    for d in corpus.datasets() {
        if assignment.side_of(&d).is_none() {
            return Err(CorpusError::UnassignedDataset(d));
        }
    }
    let mut out = corpus.clone();
    for i in 0..out.summaries.len() {
        let dataset = &out.documents[out.doc_index[&out.summaries[i].doc_id]].dataset;
        out.summaries[i].split = assignment.side_of(dataset);
    }
    Ok(out)
}
