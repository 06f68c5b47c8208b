//! Persistent score cache: an append-only JSON-lines log keyed by
//! `(metric_id, sha256(document), sha256(candidate))`.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::io::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub metric_id: String,
    pub document_hash: String,
    pub candidate_hash: String,
}

impl CacheKey {
    pub fn new(metric_id: &str, document: &str, candidate: &str) -> Self {
        Self {
            metric_id: metric_id.to_string(),
            document_hash: sha256_hex(document),
            candidate_hash: sha256_hex(candidate),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    metric: String,
    document: String,
    candidate: String,
    score: f64,
}

#[derive(Debug)]
pub struct ScoreCache {
    entries: RwLock<HashMap<CacheKey, f64>>,
    log: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self { entries: RwLock::new(HashMap::new()), log: None, path: None }
    }

    /// Opens (or creates) a cache log and replays it. A torn final line is
    /// ignored; malformed lines elsewhere are errors.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<Result<_, _>>()?;
            let last = lines.len();
            let mut torn = false;
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(line) {
                    Ok(rec) => {
                        entries
                            .entry(CacheKey {
                                metric_id: rec.metric,
                                document_hash: rec.document,
                                candidate_hash: rec.candidate,
                            })
                            .or_insert(rec.score);
                    }
                    Err(e) if i + 1 == last => {
                        log::warn!("dropping torn cache line {}: {e}", i + 1);
                        torn = true;
                    }
                    Err(e) => {
                        return Err(std::io::Error::new(
                            std::io::ErrorKind::InvalidData,
                            format!("{}:{}: {e}", path.display(), i + 1),
                        ))
                    }
                }
            }
            if torn {
                let mut kept: String = lines[..last - 1].iter().map(|l| format!("{l}\n")).collect();
                if kept.trim().is_empty() {
                    kept.clear();
                }
                crate::io::write_atomic(path, kept.as_bytes())?;
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { entries: RwLock::new(entries), log: Some(Mutex::new(file)), path: Some(path.to_path_buf()) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Option<f64> {
        self.entries.read().expect("cache lock").get(key).copied()
    }

    /// Stores `score` unless the key is already present; returns the value
    /// held by the cache afterwards and whether this call inserted it.
    pub fn insert(&self, key: CacheKey, score: f64) -> std::io::Result<(f64, bool)> {
        let mut entries = self.entries.write().expect("cache lock");
        if let Some(&existing) = entries.get(&key) {
            return Ok((existing, false));
        }
        if let Some(log) = &self.log {
            let line = serde_json::to_string(&CacheLine {
                metric: key.metric_id.clone(),
                document: key.document_hash.clone(),
                candidate: key.candidate_hash.clone(),
                score,
            })
            .expect("cache line serializes");
            let mut f = log.lock().expect("cache log lock");
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        entries.insert(key, score);
        Ok((score, true))
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
