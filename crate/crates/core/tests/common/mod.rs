#![allow(dead_code)]

use std::path::{Path, PathBuf};

use factlens::pipeline::{Pipeline, RunConfig, REPORTS_DIR};

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// The bundled demo config with its outputs redirected to `out`.
pub fn demo_config(out: &Path) -> RunConfig {
    let mut config = RunConfig::load(&demo_dir().join("run.toml")).expect("demo config loads");
    config.out_dir = out.to_path_buf();
    config
}

pub fn demo_pipeline(out: &Path) -> Pipeline {
    Pipeline::new(demo_config(out)).expect("demo config validates")
}

/// Golden report files that differ from the run's reports in `out`.
pub fn golden_mismatches(out: &Path) -> Vec<String> {
    let mut names: Vec<_> = std::fs::read_dir(golden_dir())
        .expect("golden dir")
        .map(|e| e.expect("entry").file_name().into_string().expect("utf-8 name"))
        .collect();
    names.sort();
    assert!(!names.is_empty());
    names
        .into_iter()
        .filter(|name| {
            let expected = std::fs::read(golden_dir().join(name)).expect("golden file");
            std::fs::read(out.join(REPORTS_DIR).join(name)).ok() != Some(expected)
        })
        .collect()
}
