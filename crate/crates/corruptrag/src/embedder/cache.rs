//! Persistent content-hash cache for embeddings.
//!
//! Keys are `sha256(provider_id \0 model_id \0 text)`, so two providers (or
//! two models of one provider) never share entries. The on-disk format is
//! append-only line-delimited JSON; on load, the last record for a key wins,
//! which is what makes concurrent appenders tolerable. Records are flushed
//! per write, so a cache file survives the process.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedder::{Embedder, EmbeddingVector};
use crate::error::Result;

pub fn cache_key(provider_id: &str, model_id: &str, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(provider_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(model_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    dim: usize,
    values: Vec<f32>,
}

pub struct EmbeddingCache {
    entries: HashMap<String, EmbeddingVector>,
    file: Option<File>,
    path: Option<PathBuf>,
    skipped_records: usize,
}

impl EmbeddingCache {
    /// A cache that lives only for this process.
    pub fn in_memory() -> Self {
        EmbeddingCache {
            entries: HashMap::new(),
            file: None,
            path: None,
            skipped_records: 0,
        }
    }

    /// Opens (or creates) a cache file and loads every valid record.
    /// Malformed or inconsistent lines are skipped, not fatal: a torn write
    /// from a dying process must not poison future runs.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        let mut skipped_records = 0;
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(record) if record.values.len() == record.dim => {
                        match EmbeddingVector::new(record.values) {
                            Ok(vector) => {
                                entries.insert(record.key, vector);
                            }
                            Err(_) => skipped_records += 1,
                        }
                    }
                    _ => skipped_records += 1,
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EmbeddingCache {
            entries,
            file: Some(file),
            path: Some(path.to_path_buf()),
            skipped_records,
        })
    }

    pub fn get(&self, key: &str) -> Option<&EmbeddingVector> {
        self.entries.get(key)
    }

    pub fn put(&mut self, key: String, vector: EmbeddingVector) -> Result<()> {
        if let Some(file) = self.file.as_mut() {
            let record = CacheRecord {
                key: key.clone(),
                dim: vector.dim(),
                values: vector.values().to_vec(),
            };
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn skipped_records(&self) -> usize {
        self.skipped_records
    }
}

/// Wraps a provider so every embedding flows through the cache. Hits return
/// the stored vector bit for bit; misses are forwarded in batches so remote
/// providers still get their fan-out.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Mutex<EmbeddingCache>,
    hits: std::sync::atomic::AtomicU64,
    misses: std::sync::atomic::AtomicU64,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E, cache: EmbeddingCache) -> Self {
        CachedEmbedder {
            inner,
            cache: Mutex::new(cache),
            hits: 0.into(),
            misses: 0.into(),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(std::sync::atomic::Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(std::sync::atomic::Ordering::Relaxed)
    }

    fn key(&self, text: &str) -> String {
        cache_key(self.inner.provider_id(), self.inner.model_id(), text)
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn provider_id(&self) -> &str {
        self.inner.provider_id()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let key = self.key(text);
        {
            let cache = self.cache.lock().expect("cache lock");
            if let Some(hit) = cache.get(&key) {
                self.hits.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                return Ok(hit.clone());
            }
        }
        let vector = self.inner.embed(text)?;
        self.misses.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let mut cache = self.cache.lock().expect("cache lock");
        cache.put(key, vector.clone())?;
        Ok(vector)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let mut results: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        let mut miss_indices = Vec::new();
        {
            let cache = self.cache.lock().expect("cache lock");
            for (i, text) in texts.iter().enumerate() {
                if let Some(hit) = cache.get(&self.key(text)) {
                    results[i] = Some(hit.clone());
                } else {
                    miss_indices.push(i);
                }
            }
        }
        self.hits.fetch_add(
            (texts.len() - miss_indices.len()) as u64,
            std::sync::atomic::Ordering::Relaxed,
        );
        if !miss_indices.is_empty() {
            let miss_texts: Vec<&str> = miss_indices.iter().map(|&i| texts[i]).collect();
            let vectors = self.inner.embed_batch(&miss_texts)?;
            self.misses
                .fetch_add(miss_indices.len() as u64, std::sync::atomic::Ordering::Relaxed);
            let mut cache = self.cache.lock().expect("cache lock");
            for (&i, vector) in miss_indices.iter().zip(vectors) {
                cache.put(self.key(texts[i]), vector.clone())?;
                results[i] = Some(vector);
            }
        }
        Ok(results.into_iter().map(|v| v.expect("filled slot")).collect())
    }
}
