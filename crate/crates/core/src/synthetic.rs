//! Seeded synthetic corpora for offline tests and the bundled demo run.
//!
//! Documents are sentences of random vocabulary words. Every document gets
//! one summary from a "large" and one from a "small" generator, each a copy
//! of a contiguous run of source sentences with a per-summary fraction of
//! words swapped for random ones (the small generator swaps more). Labels
//! follow `rouge2_f1 > 0.5`. Optionally the first inconsistent summaries
//! receive a human-style correction: the unmodified source sentences.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, DocumentRecord, Domain, Label, SummaryRecord};
use crate::features::rouge2_f1;

pub const LARGE_GENERATOR: &str = "synth-large";
pub const SMALL_GENERATOR: &str = "synth-small";
pub const LABEL_THRESHOLD: f64 = 0.5;

const VOCABULARY: &[&str] = &[
    "river",
    "council",
    "budget",
    "harbor",
    "engine",
    "garden",
    "market",
    "signal",
    "winter",
    "museum",
    "ticket",
    "village",
    "station",
    "report",
    "bridge",
    "teacher",
    "storm",
    "orchard",
    "library",
    "factory",
    "captain",
    "window",
    "planet",
    "festival",
    "ledger",
    "meadow",
    "tunnel",
    "harvest",
    "anchor",
    "canvas",
    "forest",
    "island",
    "pilot",
    "studio",
    "mirror",
    "lantern",
    "valley",
    "courier",
    "thunder",
    "record",
    "approved",
    "delayed",
    "opened",
    "closed",
    "visited",
    "repaired",
    "painted",
    "measured",
    "announced",
    "moved",
    "quietly",
    "early",
    "again",
    "later",
    "nearby",
    "together",
    "slowly",
    "north",
    "south",
    "newly",
];

const DOMAINS: [Domain; 3] = [Domain::News, Domain::Dialogue, Domain::Qfs];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub documents: usize,
    pub datasets: usize,
    /// Inconsistent summaries that receive a correction.
    pub corrections: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { documents: 200, datasets: 8, corrections: 0, seed: 7 }
    }
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(6..=12);
    let words: Vec<&str> = (0..n).map(|_| *VOCABULARY.choose(rng).expect("vocabulary")).collect();
    let mut s = words.join(" ");
    s[..1].make_ascii_uppercase();
    s.push('.');
    s
}

fn mutate(text: &str, rate: f64, rng: &mut ChaCha8Rng) -> String {
    text.split(' ')
        .map(|tok| {
            if rng.gen::<f64>() >= rate {
                return tok.to_string();
            }
            let (core, stop) = match tok.strip_suffix('.') {
                Some(c) => (c, "."),
                None => (tok, ""),
            };
            let mut w = VOCABULARY.choose(rng).expect("vocabulary").to_string();
            if core.starts_with(|c: char| c.is_uppercase()) {
                w[..1].make_ascii_uppercase();
            }
            format!("{w}{stop}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn synthetic_corpus(config: &SyntheticConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut documents = Vec::with_capacity(config.documents);
    let mut summaries = Vec::with_capacity(2 * config.documents + config.corrections);
    let mut corrections = Vec::new();
    for d in 0..config.documents {
        let dataset = d % config.datasets.max(1);
        let doc_id = format!("doc{d:04}");
        let sents: Vec<String> = (0..rng.gen_range(2..=5)).map(|_| sentence(&mut rng)).collect();
        let text = sents.join(" ");
        for (generator, lo, hi) in [(LARGE_GENERATOR, 0.0, 0.5), (SMALL_GENERATOR, 0.2, 0.9)] {
            let take = rng.gen_range(1..=sents.len());
            let start = rng.gen_range(0..=sents.len() - take);
            let copied = sents[start..start + take].join(" ");
            let rate = rng.gen_range(lo..hi);
            let summary = mutate(&copied, rate, &mut rng);
            let consistent = rouge2_f1(&summary, &text) > LABEL_THRESHOLD;
            let summary_id = format!("{doc_id}-{}", if generator == LARGE_GENERATOR { "l" } else { "s" });
            if !consistent && corrections.len() < config.corrections {
                corrections.push(SummaryRecord {
                    summary_id: format!("{summary_id}-fix"),
                    doc_id: doc_id.clone(),
                    text: copied.clone(),
                    label: Some(Label::Consistent),
                    generator: None,
                    split: None,
                    corrected_of: Some(summary_id.clone()),
                });
            }
            summaries.push(SummaryRecord {
                summary_id,
                doc_id: doc_id.clone(),
                text: summary,
                label: Some(if consistent { Label::Consistent } else { Label::Inconsistent }),
                generator: Some(generator.to_string()),
                split: None,
                corrected_of: None,
            });
        }
        documents.push(DocumentRecord {
            doc_id,
            text,
            dataset: format!("synth-{dataset}"),
            domain: DOMAINS[dataset % DOMAINS.len()],
        });
    }
    summaries.extend(corrections);
    Corpus::new(documents, summaries).expect("synthetic corpus is valid")
}
