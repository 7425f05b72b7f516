//! Disk cache for embeddings.
//!
//! Each entry is a pair of files named by the cache key: `<key>.f64le`
//! holding the 768 doubles little-endian, and `<key>.meta.json` describing
//! where the vector came from. Writes are atomic, so parallel workers can
//! share one cache directory; corrupt or truncated entries read as misses
//! and are recomputed.

use super::{Embedding, EncoderError, Modality};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Provenance record stored beside each cached vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub key: String,
    pub provider: String,
    pub modality: Modality,
    pub sample_id: String,
    /// Hash of the encoder input (waveform content or transcript text).
    pub input_hash: String,
}

pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn new(dir: &Path) -> std::io::Result<EmbeddingCache> {
        std::fs::create_dir_all(dir)?;
        Ok(EmbeddingCache {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Cache key over provider identity and input content.
    pub fn key(provider_name: &str, input_hash: &str) -> String {
        crate::util::sha256_hex(&[
            b"embedding-cache",
            provider_name.as_bytes(),
            input_hash.as_bytes(),
        ])
    }

    fn vector_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.f64le"))
    }

    fn meta_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.meta.json"))
    }

    pub fn get(&self, key: &str) -> Option<Embedding> {
        let bytes = std::fs::read(self.vector_path(key)).ok()?;
        Embedding::from_le_bytes(&bytes).ok()
    }

    pub fn put(&self, meta: &EmbeddingMeta, embedding: &Embedding) -> std::io::Result<()> {
        crate::util::atomic_write(&self.vector_path(&meta.key), &embedding.to_le_bytes())?;
        let meta_bytes = serde_json::to_vec(meta).expect("meta serialization cannot fail");
        crate::util::atomic_write(&self.meta_path(&meta.key), &meta_bytes)
    }

    /// Fetch the cached vector or compute, store, and return it.
    pub fn get_or_compute(
        &self,
        meta: &EmbeddingMeta,
        compute: impl FnOnce() -> Result<Embedding, EncoderError>,
    ) -> Result<Embedding, EncoderError> {
        if let Some(hit) = self.get(&meta.key) {
            return Ok(hit);
        }
        let embedding = compute()?;
        self.put(meta, &embedding)?;
        Ok(embedding)
    }

    /// All stored metadata records, sorted by key.
    pub fn entries(&self) -> std::io::Result<Vec<EmbeddingMeta>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let bytes = std::fs::read(&path)?;
            if let Ok(meta) = serde_json::from_slice::<EmbeddingMeta>(&bytes) {
                out.push(meta);
            }
        }
        out.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(out)
    }

    /// Write a consolidated JSONL index of the cache contents.
    pub fn write_index(&self, path: &Path) -> std::io::Result<()> {
        let mut bytes = Vec::new();
        for meta in self.entries()? {
            serde_json::to_writer(&mut bytes, &meta).expect("meta serialization cannot fail");
            bytes.push(b'\n');
        }
        crate::util::atomic_write(path, &bytes)
    }
}
