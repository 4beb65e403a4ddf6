//! Append-only, line-delimited JSON cache keyed by content hash.
//!
//! Each line is one record `{key, model, <payload fields>, checksum}`. The
//! checksum covers the serialized payload; lines that fail to parse or verify
//! are counted as corrupt and ignored, so their keys miss and get refetched.
//! Later records for a key supersede earlier ones.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("corrupt cache entry: {0}")]
    CorruptCacheEntry(String),
    #[error("cache I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord<V> {
    pub key: String,
    pub model: String,
    #[serde(flatten)]
    pub payload: V,
    pub checksum: String,
}

impl<V: Serialize + DeserializeOwned> CacheRecord<V> {
    pub fn new(key: String, model: String, payload: V) -> Self {
        let checksum = payload_checksum(&payload);
        CacheRecord { key, model, payload, checksum }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("cache records always serialize")
    }

    /// Parses and verifies one cache line.
    pub fn parse_line(line: &str) -> Result<Self, CacheError> {
        let record: CacheRecord<V> =
            serde_json::from_str(line).map_err(|e| CacheError::CorruptCacheEntry(e.to_string()))?;
        let expected = payload_checksum(&record.payload);
        if record.checksum != expected {
            return Err(CacheError::CorruptCacheEntry(format!(
                "checksum mismatch for key {} (stored {}, computed {expected})",
                record.key, record.checksum
            )));
        }
        Ok(record)
    }
}

fn payload_checksum<V: Serialize>(payload: &V) -> String {
    let body = serde_json::to_string(payload).expect("cache payloads always serialize");
    hashing::sha256_hex(&[&body])[..16].to_string()
}

/// Summary of a cache file, for `cache inspect`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CacheSummary {
    pub entries: usize,
    pub corrupt_lines: usize,
    pub models: Vec<String>,
}

pub struct JsonlCache<V> {
    path: Option<PathBuf>,
    entries: HashMap<String, V>,
    models: HashMap<String, String>,
    corrupt_lines: usize,
    writer: Option<File>,
    _payload: PhantomData<V>,
}

impl<V: Serialize + DeserializeOwned + Clone> JsonlCache<V> {
    /// A cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        JsonlCache {
            path: None,
            entries: HashMap::new(),
            models: HashMap::new(),
            corrupt_lines: 0,
            writer: None,
            _payload: PhantomData,
        }
    }

    /// Opens (creating if needed) a cache file and loads every valid record.
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let io = |source| CacheError::Io { path: path.to_path_buf(), source };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path).map_err(io)?;

        let mut cache = JsonlCache::in_memory();
        cache.path = Some(path.to_path_buf());
        for line in BufReader::new(&mut file).lines() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            match CacheRecord::<V>::parse_line(&line) {
                Ok(rec) => {
                    cache.models.insert(rec.key.clone(), rec.model);
                    cache.entries.insert(rec.key, rec.payload);
                }
                Err(e) => {
                    log::warn!("{}: skipping {e}", path.display());
                    cache.corrupt_lines += 1;
                }
            }
        }

        // a truncated final line must not swallow the next appended record
        let len = file.metadata().map_err(io)?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1)).map_err(io)?;
            file.read_exact(&mut last).map_err(io)?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(io)?;
            }
        }
        cache.writer = Some(file);
        Ok(cache)
    }

    pub fn get(&self, key: &str) -> Option<&V> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Stores a value in memory and appends it to the backing file.
    pub fn put(&mut self, key: &str, model: &str, payload: V) -> Result<(), CacheError> {
        if let Some(file) = self.writer.as_mut() {
            let record = CacheRecord::new(key.to_string(), model.to_string(), payload.clone());
            let mut line = record.to_line();
            line.push('\n');
            let path = self.path.clone().unwrap_or_default();
            file.write_all(line.as_bytes()).map_err(|source| CacheError::Io { path: path.clone(), source })?;
            file.flush().map_err(|source| CacheError::Io { path, source })?;
        }
        self.models.insert(key.to_string(), model.to_string());
        self.entries.insert(key.to_string(), payload);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn corrupt_lines(&self) -> usize {
        self.corrupt_lines
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn summary(&self) -> CacheSummary {
        let mut models: Vec<String> = self.models.values().cloned().collect();
        models.sort();
        models.dedup();
        CacheSummary { entries: self.entries.len(), corrupt_lines: self.corrupt_lines, models }
    }
}

/// Deletes a cache file; missing files are not an error.
pub fn clear(path: &Path) -> Result<bool, CacheError> {
    match fs::remove_file(path) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(source) => Err(CacheError::Io { path: path.to_path_buf(), source }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Payload {
        values: Vec<f64>,
    }

    #[test]
    fn write_then_reopen_restores_values_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let values: Vec<f64> = (0..768).map(|i| (i as f64 * 0.377).sin() / 3.0).collect();
        {
            let mut c = JsonlCache::open(&path).unwrap();
            c.put("k", "m", Payload { values: values.clone() }).unwrap();
        }
        let c = JsonlCache::<Payload>::open(&path).unwrap();
        let got = &c.get("k").unwrap().values;
        assert!(got.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_line_is_corrupt_not_fatal() {
        let rec = CacheRecord::new("k".into(), "m".into(), Payload { values: vec![1.5, 2.5] });
        let line = rec.to_line();
        let truncated = &line[..line.len() - 7];
        assert!(matches!(CacheRecord::<Payload>::parse_line(truncated), Err(CacheError::CorruptCacheEntry(_))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let good = CacheRecord::new("g".into(), "m".into(), Payload { values: vec![0.25] }).to_line();
        fs::write(&path, format!("{good}\n{truncated}")).unwrap();
        let mut c = JsonlCache::<Payload>::open(&path).unwrap();
        assert_eq!(c.corrupt_lines(), 1);
        assert!(c.contains("g"));
        assert!(!c.contains("k"));
        // appending after a truncated tail starts on a fresh line
        c.put("k", "m", Payload { values: vec![1.5, 2.5] }).unwrap();
        drop(c);
        let c = JsonlCache::<Payload>::open(&path).unwrap();
        assert_eq!(c.get("k").unwrap().values, vec![1.5, 2.5]);
        assert_eq!(c.corrupt_lines(), 1);
    }

    #[test]
    fn tampered_payload_fails_checksum() {
        let line = CacheRecord::new("k".into(), "m".into(), Payload { values: vec![1.0] }).to_line();
        let tampered = line.replace("[1.0]", "[2.0]");
        assert_ne!(line, tampered);
        let err = CacheRecord::<Payload>::parse_line(&tampered).unwrap_err();
        assert!(err.to_string().contains("checksum"));
    }

    #[test]
    fn clear_removes_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/c.jsonl");
        JsonlCache::<Payload>::open(&path).unwrap();
        assert!(clear(&path).unwrap());
        assert!(!clear(&path).unwrap());
    }
}
