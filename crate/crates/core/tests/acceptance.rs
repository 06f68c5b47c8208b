//! Acceptance suite: one PASS/FAIL line per criterion. Every expected value
//! comes from an oracle written here, independently of the library code.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use factlens::analysis::{self, FeatureTable, SHALLOW_METRIC};
use factlens::corpus::{self, Corpus, CorpusSplit};
use factlens::features::{extract_features, rouge2_f1, CapitalizedSpanExtractor, FeatureVector, HashingEmbedder};
use factlens::gaming::{self, PhraseKind, PhraseSet};
use factlens::gateway::{
    mock_lexical, BackendError, FnScorer, Gateway, MetricBackend, MetricScore, Registry, ScoreCache, ScoreRequest,
};
use factlens::network::{Activation, Objective};
use factlens::perturbation::VariantKind;
use factlens::shallow_model::NetworkConfig;
use factlens::stats;
use factlens::synthetic::{synthetic_corpus, SyntheticConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Splits the synthetic corpus into dataset-disjoint halves and computes
/// features for every summary.
fn split_with_features(cfg: &SyntheticConfig, split_seed: u64) -> (Corpus, FeatureTable) {
    let raw = synthetic_corpus(cfg);
    let datasets = raw.datasets();
    let split = CorpusSplit::random(&datasets, datasets.len() / 2, split_seed);
    let corpus = corpus::split_by_dataset(&raw, &split).expect("split");
    let embedder = HashingEmbedder::default();
    let extractor = CapitalizedSpanExtractor::default();
    let features = corpus
        .summaries()
        .iter()
        .map(|s| {
            let fv = extract_features(&s.text, &corpus.document_of(s).text, &embedder, &extractor).expect("features");
            (s.summary_id.clone(), fv)
        })
        .collect();
    (corpus, features)
}

fn score_rows(metric: &str, rows: impl IntoIterator<Item = (String, String, f64)>) -> Vec<MetricScore> {
    rows.into_iter()
        .map(|(doc_id, variant_id, score)| MetricScore {
            metric_id: metric.into(),
            doc_id,
            variant_id,
            score,
            cached: false,
        })
        .collect()
}

fn feature_suite() -> Outcome {
    let start = Instant::now();
    let embedder = HashingEmbedder::default();
    let extractor = CapitalizedSpanExtractor::default();

    let mut runner =
        TestRunner::new(ProptestConfig { cases: 512, failure_persistence: None, ..ProptestConfig::default() });
    let text = "[A-Za-z0-9 .,!?'éÉ]{1,120}";
    runner
        .run(&(text, text), |(summary, source)| {
            if let Ok(fv) = extract_features(&summary, &source, &embedder, &extractor) {
                prop_assert!(fv.is_valid(), "{fv:?} for {summary:?} / {source:?}");
                prop_assert!(fv.to_array().iter().all(|x| x.is_finite()));
            }
            Ok(())
        })
        .map_err(|e| format!("range invariant: {e}"))?;

    let text = "Paris hosted the Summit in 2019. Officials met on Monday and agreed on a plan.";
    let identity = extract_features(text, text, &embedder, &extractor).map_err(|e| e.to_string())?;
    let expected = FeatureVector::from_array([1.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
    check(identity == expected, || format!("identity pair gave {identity:?}"))?;

    // Bigrams: summary {the cat, cat sat}, source {the cat, cat ran, ran home};
    // one match, P = 1/2, R = 1/3, F1 = 2PR/(P+R) = 0.4.
    let (p, r) = (1.0 / 2.0, 1.0 / 3.0);
    let oracle = 2.0 * p * r / (p + r);
    let got = rouge2_f1("the cat sat", "the cat ran home");
    check(got == oracle, || format!("rouge2 example: {got} != {oracle}"))?;
    check((oracle - 0.4).abs() < 1e-15, || "oracle arithmetic".into())?;

    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("512 random pairs, identity vector, F1 = {got} in {:.2} s", elapsed.as_secs_f64()))
}

fn shallow_classifier() -> Outcome {
    let cfg = SyntheticConfig { documents: 200, datasets: 8, corrections: 0, seed: 11 };
    let (corpus, features) = split_with_features(&cfg, 3);
    check(corpus.summaries().len() == 400, || "expected 400 pairs".into())?;
    let dev: BTreeSet<_> =
        corpus.summaries_in(corpus::Split::Dev).map(|s| corpus.document_of(s).dataset.clone()).collect();
    let test: BTreeSet<_> =
        corpus.summaries_in(corpus::Split::Test).map(|s| corpus.document_of(s).dataset.clone()).collect();
    check(dev.is_disjoint(&test), || "splits share datasets".into())?;

    let model =
        analysis::train_shallow_classifier(&corpus, &features, &NetworkConfig::default()).map_err(|e| e.to_string())?;
    let report = analysis::auc_by_domain(&corpus, &[], Some((&model, &features))).map_err(|e| e.to_string())?;
    let row = report.find(SHALLOW_METRIC, analysis::ALL_DOMAINS, "auc").ok_or("no auc row")?;
    check(row.value >= 0.95, || format!("held-out AUC {:.4} < 0.95", row.value))?;
    Ok(format!("held-out AUC {:.4} on {} test pairs", row.value, row.n))
}

fn replication() -> Outcome {
    let cfg = SyntheticConfig { documents: 200, datasets: 8, corrections: 0, seed: 5 };
    let (corpus, features) = split_with_features(&cfg, 9);
    let config = NetworkConfig { epochs: 400, ..NetworkConfig::default() };

    let lexical = score_rows(
        "mock-lexical",
        corpus.summaries().iter().map(|s| {
            let score = mock_lexical(&corpus.document_of(s).text, &s.text).expect("scores");
            (s.doc_id.clone(), s.summary_id.clone(), score)
        }),
    );
    let rep =
        analysis::replicate_metric(&corpus, &features, &lexical, "mock-lexical", &config).map_err(|e| e.to_string())?;
    check(rep.spearman >= 0.90, || format!("mock-lexical spearman {:.4} < 0.90", rep.spearman))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let random = score_rows(
        "random",
        corpus.summaries().iter().map(|s| (s.doc_id.clone(), s.summary_id.clone(), rng.gen::<f64>())),
    );
    let null = analysis::replicate_metric(&corpus, &features, &random, "random", &config).map_err(|e| e.to_string())?;
    check(null.n_test == 200, || format!("random target test n = {}", null.n_test))?;
    check(null.spearman.abs() <= 0.2, || format!("random target |spearman| {:.4} > 0.2", null.spearman))?;
    Ok(format!(
        "mock-lexical rho {:.4} (n = {}); random rho {:.4} (n = {})",
        rep.spearman, rep.n_test, null.spearman, null.n_test
    ))
}

/// Exhaustive tf·idf over summaries whose text is plain words and periods.
fn brute_force_mine(summaries: &[(String, f64)], percentile: f64, top_k: usize) -> Vec<((String, String), f64)> {
    let bigrams = |text: &str| -> Vec<(String, String)> {
        text.split('.')
            .flat_map(|sentence| {
                let w: Vec<String> = sentence.split_whitespace().map(str::to_lowercase).collect();
                w.windows(2).map(|p| (p[0].clone(), p[1].clone())).collect::<Vec<_>>()
            })
            .collect()
    };
    let mut sorted: Vec<f64> = summaries.iter().map(|s| s.1).collect();
    sorted.sort_by(f64::total_cmp);
    let rank = percentile / 100.0 * (sorted.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    let threshold = sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64);

    let all: BTreeSet<(String, String)> = summaries.iter().flat_map(|s| bigrams(&s.0)).collect();
    let n = summaries.len() as f64;
    let mut scored = Vec::new();
    for b in all {
        let df = summaries.iter().filter(|s| bigrams(&s.0).contains(&b)).count();
        let tf: usize = summaries
            .iter()
            .filter(|s| s.1 >= threshold)
            .map(|s| bigrams(&s.0).iter().filter(|x| **x == b).count())
            .sum();
        if tf > 0 {
            scored.push((b, tf as f64 * (n / df as f64).ln()));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(top_k);
    scored
}

fn miner() -> Outcome {
    let corpus = synthetic_corpus(&SyntheticConfig { documents: 50, datasets: 5, corrections: 0, seed: 21 });
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut rows: Vec<(String, f64)> = corpus.summaries().iter().map(|s| (s.text.clone(), rng.gen())).collect();
    let mut order: Vec<f64> = rows.iter().map(|r| r.1).collect();
    order.sort_by(f64::total_cmp);
    let cutoff = order[order.len() * 4 / 5];
    let mut planted = 0;
    for r in rows.iter_mut().filter(|r| r.1 >= cutoff) {
        r.0.push_str(" The document discusses.");
        planted += 1;
    }
    check(planted == rows.len() / 5, || format!("planted into {planted} summaries"))?;

    let input: Vec<(&str, f64)> = rows.iter().map(|r| (r.0.as_str(), r.1)).collect();
    let mined = gaming::mine_bigrams(&input, 80.0, 10, "planted").map_err(|e| e.to_string())?;
    let top: Vec<(String, String)> = mined.iter().map(|m| m.bigram.clone()).collect();
    for want in [("the", "document"), ("document", "discusses")] {
        let want = (want.0.to_string(), want.1.to_string());
        check(top.contains(&want), || format!("{want:?} missing from top-10 {top:?}"))?;
    }

    let full = gaming::mine_bigrams(&input, 80.0, usize::MAX, "planted").map_err(|e| e.to_string())?;
    let oracle = brute_force_mine(&rows, 80.0, usize::MAX);
    check(full.len() == oracle.len(), || format!("{} mined vs {} brute force", full.len(), oracle.len()))?;
    for (m, (b, w)) in full.iter().zip(&oracle) {
        check(&m.bigram == b && (m.tfidf - w).abs() <= 1e-12, || {
            format!("mined {:?} {} vs brute force {b:?} {w}", m.bigram, m.tfidf)
        })?;
    }
    Ok(format!("planted bigrams ranked {:?}; {} bigrams match brute force", &top[..2], full.len()))
}

fn gaming_oracle() -> Outcome {
    let phrases = PhraseSet::builtin();
    let top = phrases.get(PhraseKind::Top, "rigged").map_err(|e| e.to_string())?.text.clone();
    let suffixes: Vec<String> = phrases.phrases().iter().map(|p| format!(" {}", p.text)).collect();
    // Rigged metric: a lexical score of the candidate with any phrase suffix
    // removed, plus 0.30 when the top phrase is appended.
    let top_suffix = format!(" {top}");
    let rigged = move |document: &str, candidate: &str| -> Result<f64, BackendError> {
        let core = suffixes.iter().find_map(|s| candidate.strip_suffix(s.as_str())).unwrap_or(candidate);
        let bonus = if candidate.ends_with(&top_suffix) { 0.30 } else { 0.0 };
        Ok(0.6 * mock_lexical(document, core)? + bonus)
    };
    let registry = Registry::builder(true)
        .register(MetricBackend::builtin("rigged"), Arc::new(FnScorer(rigged)))
        .build()
        .map_err(|e| e.to_string())?;
    let gateway = Gateway::new(registry, ScoreCache::in_memory());

    let corpus = synthetic_corpus(&SyntheticConfig { documents: 15, datasets: 3, corrections: 0, seed: 4 });
    let mut scores = Vec::new();
    let mut variants = Vec::new();
    for s in corpus.summaries() {
        let doc = corpus.document_of(s);
        let base =
            ScoreRequest { doc_id: &s.doc_id, variant_id: &s.summary_id, document: &doc.text, candidate: &s.text };
        scores.push(gateway.score("rigged", &base).map_err(|e| e.to_string())?);
        for v in gaming::build_gamed_variants(s, &phrases, "rigged").map_err(|e| e.to_string())? {
            let req =
                ScoreRequest { doc_id: &s.doc_id, variant_id: &v.variant_id, document: &doc.text, candidate: &v.text };
            scores.push(gateway.score("rigged", &req).map_err(|e| e.to_string())?);
            variants.push(v);
        }
    }
    let rows = gaming::gaming_report(&scores, &variants).map_err(|e| e.to_string())?;
    let get = |kind: VariantKind| rows.iter().find(|r| r.kind == kind && r.metric_id == "rigged");
    let t = get(VariantKind::GamedTop).ok_or("no gamed_top row")?;
    let b = get(VariantKind::GamedBaseline).ok_or("no gamed_baseline row")?;
    check((t.mean - 0.30).abs() <= 1e-9, || format!("gamed_top mean delta {}", t.mean))?;
    check(b.mean.abs() <= 1e-9, || format!("gamed_baseline mean delta {}", b.mean))?;
    check(t.n == corpus.summaries().len(), || format!("gamed_top n = {}", t.n))?;
    Ok(format!("gamed_top {:+.12}, gamed_baseline {:+.12} over {} summaries", t.mean, b.mean, t.n))
}

fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
    let ranks = |xs: &[f64]| -> Vec<f64> {
        xs.iter()
            .map(|&x| {
                let less = xs.iter().filter(|&&y| y < x).count() as f64;
                let equal = xs.iter().filter(|&&y| y == x).count() as f64;
                1.0 + less + (equal - 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    while checked < 50 {
        let n = rng.gen_range(3..=12);
        // Small integer grids force ties.
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let both = labels.iter().any(|&l| l) && labels.iter().any(|&l| !l);
        let varies = |xs: &[f64]| xs.iter().any(|&x| x != xs[0]);
        if !both || !varies(&a) || !varies(&b) {
            continue;
        }
        let auc = stats::roc_auc(&a, &labels).map_err(|e| e.to_string())?;
        let want = auc_oracle(&a, &labels);
        check((auc - want).abs() < 1e-12, || format!("roc_auc {auc} vs {want} on {a:?} {labels:?}"))?;
        let rho = stats::spearman(&a, &b).map_err(|e| e.to_string())?;
        let want = spearman_oracle(&a, &b);
        check((rho - want).abs() < 1e-12, || format!("spearman {rho} vs {want} on {a:?} {b:?}"))?;
        checked += 1;
    }

    let mut worst: f64 = 0.0;
    for (activation, objective) in [
        (Activation::Tanh, Objective::BinaryCrossEntropy),
        (Activation::Tanh, Objective::SquaredError),
        (Activation::Relu, Objective::BinaryCrossEntropy),
        (Activation::Relu, Objective::SquaredError),
    ] {
        let mut net = factlens::Network::init(6, &[5, 4], activation, &mut rng);
        let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<f64> = (0..8).map(|_| rng.gen_range(0..2) as f64).collect();
        let (_, grad) = net.loss_and_gradient(&xs, &ys, objective);
        let params = net.params();
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            net.set_params(&p);
            let up = net.loss(&xs, &ys, objective);
            p[i] -= 2.0 * h;
            net.set_params(&p);
            let down = net.loss(&xs, &ys, objective);
            let numeric = (up - down) / (2.0 * h);
            let scale = grad[i].abs().max(numeric.abs());
            let err = if scale < 1e-8 { (grad[i] - numeric).abs() } else { (grad[i] - numeric).abs() / scale };
            check(err <= 1e-4, || {
                format!("{activation:?}/{objective:?} param {i}: analytic {} vs numeric {numeric}", grad[i])
            })?;
            worst = worst.max(err);
        }
        net.set_params(&params);
    }
    Ok(format!("50 instances exact; worst gradient relative error {worst:.2e}"))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    common::demo_pipeline(dir.path()).run_all().map_err(|e| e.to_string())?;
    let mismatched = common::golden_mismatches(dir.path());
    check(mismatched.is_empty(), || format!("differs from golden: {mismatched:?}"))?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    let n = std::fs::read_dir(common::golden_dir()).map_err(|e| e.to_string())?.count();
    Ok(format!("{n} golden report files identical in {:.2} s", elapsed.as_secs_f64()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        ("feature property suite", feature_suite),
        ("shallow classifier oracle", shallow_classifier),
        ("replication oracle", replication),
        ("miner planted-signal test", miner),
        ("gaming pipeline oracle", gaming_oracle),
        ("statistics oracles", statistics),
        ("deterministic end-to-end", end_to_end),
    ];
    let mut failed = BTreeMap::new();
    for (name, run) in criteria {
        match std::panic::catch_unwind(run) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                println!("FAIL  {name}: {why}");
                failed.insert(name, why);
            }
            Err(_) => {
                println!("FAIL  {name}: panicked");
                failed.insert(name, "panicked".into());
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
