mod common;

use factlens::pipeline::{Manifest, PipelineError, Stage, MANIFEST_FILE, REPORTS_DIR, SCORES_FILE, VARIANTS_FILE};

#[test]
fn demo_run_matches_golden_reports() {
    let dir = tempfile::tempdir().unwrap();
    common::demo_pipeline(dir.path()).run_all().unwrap();
    let mismatched = common::golden_mismatches(dir.path());
    assert!(mismatched.is_empty(), "differs from golden: {mismatched:?}");
}

#[test]
fn rerun_is_byte_identical_with_identical_manifest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    common::demo_pipeline(a.path()).run_all().unwrap();
    common::demo_pipeline(b.path()).run_all().unwrap();
    let read = |d: &std::path::Path| Manifest::load(&d.join(MANIFEST_FILE)).unwrap().unwrap();
    let (ma, mb) = (read(a.path()), read(b.path()));
    // The out_dir differs, so the config hash does; every artifact hash must not.
    assert_eq!(ma.stages, mb.stages);
    assert_eq!(ma.stages.len(), Stage::ALL.len());

    // A second run in the same directory (warm cache) changes nothing.
    common::demo_pipeline(a.path()).run_all().unwrap();
    assert_eq!(read(a.path()), ma);
}

#[test]
fn report_without_scores_names_the_score_stage() {
    let dir = tempfile::tempdir().unwrap();
    let p = common::demo_pipeline(dir.path());
    p.run(&[Stage::Ingest, Stage::Features, Stage::TrainShallow]).unwrap();
    let err = p.run(&[Stage::Report]).unwrap_err();
    match &err {
        PipelineError::MissingArtifact { artifact, stage } => {
            assert_eq!(*stage, Stage::Score);
            assert!(artifact.ends_with(SCORES_FILE));
        }
        other => panic!("unexpected {other}"),
    }
    assert!(err.to_string().contains("run the score stage first"));
    assert_eq!(err.exit_code(), 2);
    assert!(!dir.path().join(REPORTS_DIR).exists());
}

#[test]
fn features_before_ingest_names_the_ingest_stage() {
    let dir = tempfile::tempdir().unwrap();
    let err = common::demo_pipeline(dir.path()).run(&[Stage::Features]).unwrap_err();
    assert!(matches!(err, PipelineError::MissingArtifact { stage: Stage::Ingest, .. }), "{err}");
}

#[test]
fn score_without_variants_scores_summaries_only() {
    let dir = tempfile::tempdir().unwrap();
    let p = common::demo_pipeline(dir.path());
    p.run(&[Stage::Ingest, Stage::Score]).unwrap();
    assert!(!dir.path().join(VARIANTS_FILE).exists());
    let n = std::fs::read_to_string(dir.path().join(SCORES_FILE)).unwrap().lines().count();
    assert_eq!(n, 20);
}

#[test]
fn offline_config_rejects_remote_backends() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = common::demo_config(dir.path());
    config.backends.insert("mock-lexical".into(), "http://127.0.0.1:9".into());
    let err = factlens::Pipeline::new(config).err().expect("rejected");
    assert_eq!(err.exit_code(), 1);

    let mut config = common::demo_config(dir.path());
    config.metrics.push("summac".into());
    config.offline = false;
    let p = factlens::Pipeline::new(config).unwrap();
    p.run(&[Stage::Ingest]).unwrap();
    let err = p.run(&[Stage::Score]).unwrap_err();
    assert!(err.to_string().contains("summac"), "{err}");
    assert_eq!(err.exit_code(), 1);
}
