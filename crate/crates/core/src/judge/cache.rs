use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub score: f64,
    pub timestamp: u64,
}

/// Append-only score cache keyed by content hash, optionally backed by a
/// line-delimited JSON file. Safe to share between threads.
#[derive(Debug, Default)]
pub struct JudgeCache {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, f64>>,
    writer: Mutex<Option<File>>,
}

impl JudgeCache {
    pub fn in_memory() -> Self {
        JudgeCache::default()
    }

    /// Loads existing records from `path` (if present) and appends new ones to it.
    /// Unreadable lines are skipped.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                if let Ok(rec) = serde_json::from_str::<CacheRecord>(&line?) {
                    entries.insert(rec.key, rec.score);
                }
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JudgeCache {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
            writer: Mutex::new(Some(writer)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.lock().expect("cache lock").get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, key: &str, score: f64) -> std::io::Result<()> {
        {
            let mut entries = self.entries.lock().expect("cache lock");
            if entries.contains_key(key) {
                return Ok(());
            }
            entries.insert(key.to_string(), score);
        }
        let mut writer = self.writer.lock().expect("cache lock");
        if let Some(file) = writer.as_mut() {
            let timestamp = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs());
            let rec = CacheRecord {
                key: key.to_string(),
                score,
                timestamp,
            };
            let mut line = serde_json::to_string(&rec).expect("record serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        Ok(())
    }
}
