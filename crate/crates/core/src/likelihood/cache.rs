//! Read-through, append-only score cache.
//!
//! One JSON object per line: `{"key", "pieces", "nlls", "base"}`. Tokenize
//! results are stored the same way with an empty `nlls` array. An
//! unterminated trailing line (a write interrupted by a crash) is dropped and
//! truncated away on open; any other unparseable line refuses the load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LikelihoodError, LikelihoodProvider, LogBase, Result, ScoredSuffix, Tokenizer};

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    pieces: Vec<String>,
    nlls: Vec<f64>,
    base: LogBase,
}

pub struct CachedProvider<P> {
    inner: P,
    path: PathBuf,
    entries: RwLock<HashMap<String, ScoredSuffix>>,
    writer: Mutex<File>,
    misses: std::sync::atomic::AtomicU64,
}

fn cache_key(provider: &str, kind: &str, prefix: &str, completion: &str) -> String {
    let mut h = Sha256::new();
    for part in [provider, kind, prefix, completion] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

impl<P: LikelihoodProvider> CachedProvider<P> {
    pub fn open(inner: P, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let mut entries = HashMap::new();
        let mut valid_len = 0usize;
        let mut line_no = 0usize;
        let mut start = 0usize;
        while start < bytes.len() {
            line_no += 1;
            let Some(rel_end) = bytes[start..].iter().position(|b| *b == b'\n') else {
                log::warn!("dropping partial trailing record in {}", path.display());
                break;
            };
            let line = &bytes[start..start + rel_end];
            start += rel_end + 1;
            if line.iter().all(u8::is_ascii_whitespace) {
                valid_len = start;
                continue;
            }
            let record: CacheRecord = serde_json::from_slice(line).map_err(|_| {
                LikelihoodError::CacheCorrupt { path: path.display().to_string(), line: line_no }
            })?;
            if record.pieces.len() != record.nlls.len() && !record.nlls.is_empty() {
                return Err(LikelihoodError::CacheCorrupt { path: path.display().to_string(), line: line_no });
            }
            let nlls = if record.nlls.is_empty() { vec![0.0; record.pieces.len()] } else { record.nlls };
            entries.insert(record.key, ScoredSuffix::from_nlls(record.pieces, nlls, record.base));
            valid_len = start;
        }
        if valid_len < bytes.len() {
            file.set_len(valid_len as u64)?;
            file.seek(SeekFrom::End(0))?;
        }
        Ok(Self {
            inner,
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(file),
            misses: Default::default(),
        })
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of calls that reached the wrapped provider.
    pub fn backend_calls(&self) -> u64 {
        self.misses.load(std::sync::atomic::Ordering::Relaxed)
    }

    fn lookup(&self, key: &str) -> Option<ScoredSuffix> {
        self.entries.read().expect("cache lock poisoned").get(key).cloned()
    }

    fn store(&self, key: String, value: &ScoredSuffix, with_nlls: bool) -> Result<()> {
        let record = CacheRecord {
            key: key.clone(),
            pieces: value.pieces().to_vec(),
            nlls: if with_nlls { value.nlls().to_vec() } else { Vec::new() },
            base: value.base(),
        };
        let mut line = serde_json::to_vec(&record).expect("record serializes");
        line.push(b'\n');
        {
            let mut w = self.writer.lock().expect("cache writer poisoned");
            w.write_all(&line)?;
            w.flush()?;
        }
        self.entries.write().expect("cache lock poisoned").insert(key, value.clone());
        Ok(())
    }
}

impl<P: LikelihoodProvider> Tokenizer for CachedProvider<P> {
    fn tokenize(&self, text: &str) -> Result<Vec<String>> {
        let key = cache_key(self.inner.name(), "tokenize", "", text);
        if let Some(hit) = self.lookup(&key) {
            return Ok(hit.pieces().to_vec());
        }
        self.misses.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let pieces = self.inner.tokenize(text)?;
        let n = pieces.len();
        let value = ScoredSuffix::from_nlls(pieces.clone(), vec![0.0; n], self.inner.base());
        self.store(key, &value, false)?;
        Ok(pieces)
    }
}

impl<P: LikelihoodProvider> LikelihoodProvider for CachedProvider<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn base(&self) -> LogBase {
        self.inner.base()
    }

    fn score_raw(&self, prefix: &str, completion: &str) -> Result<ScoredSuffix> {
        let key = cache_key(self.inner.name(), "score", prefix, completion);
        if let Some(hit) = self.lookup(&key) {
            return Ok(hit);
        }
        self.misses.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let scored = self.inner.score(prefix, completion)?;
        self.store(key, &scored, true)?;
        Ok(scored)
    }
}
