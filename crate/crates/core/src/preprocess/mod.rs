//! Model-input derivation: audio chunk extraction under the two regimes
//! (annotated segment vs. fixed window before the change) and transcript
//! acquisition (manual annotation, or ASR through a persistent cache).

pub mod asr;

pub use asr::{resolve_asr_client, AsrClient, AsrError, CommandAsr, HttpAsr, ReplayAsr, StubAsr};

use crate::audio::Waveform;
use crate::corpus::{resolve_media_path, Corpus, Sample};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Sample rate of extracted chunk artifacts. Downstream audio encoders
/// expect 16 kHz mono input.
pub const ARTIFACT_RATE: u32 = 16_000;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("sample `{sample_id}`: media unreadable: {source}")]
    MediaUnreadable {
        sample_id: String,
        source: crate::audio::AudioError,
    },
    #[error("sample `{sample_id}`: chunk interval is empty (change_time == 0)")]
    EmptyInterval { sample_id: String },
    #[error("sample `{sample_id}`: ASR unavailable: {source}")]
    AsrUnavailable {
        sample_id: String,
        source: AsrError,
    },
    #[error("sample `{sample_id}` has no manual transcript")]
    ManualTranscriptMissing { sample_id: String },
    #[error("unsupported input setting `{0}` (expected ref_auto, ref_man, or 3s_auto)")]
    UnsupportedSetting(String),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt record in {path}: {detail}")]
    CorruptRecord { path: String, detail: String },
}

/// How to cut audio around a speaker change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkMode {
    /// The annotated segment exactly.
    Ref,
    /// A fixed-length window ending at the change; may reach back into
    /// earlier speakers' turns.
    Fixed,
}

impl std::str::FromStr for ChunkMode {
    type Err = PreprocessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ref" => Ok(ChunkMode::Ref),
            "fixed" => Ok(ChunkMode::Fixed),
            other => Err(PreprocessError::UnsupportedSetting(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkSpec {
    pub mode: ChunkMode,
    /// Window length in seconds; used only when `mode == Fixed`.
    pub window: f64,
}

impl ChunkSpec {
    pub const DEFAULT_WINDOW: f64 = 3.0;

    pub fn reference() -> ChunkSpec {
        ChunkSpec {
            mode: ChunkMode::Ref,
            window: Self::DEFAULT_WINDOW,
        }
    }

    pub fn fixed(window: f64) -> ChunkSpec {
        assert!(
            window.is_finite() && window > 0.0,
            "chunk window must be positive, got {window}"
        );
        ChunkSpec {
            mode: ChunkMode::Fixed,
            window,
        }
    }

    /// Tag used in artifact file names so different specs never collide.
    pub fn tag(&self) -> String {
        match self.mode {
            ChunkMode::Ref => "ref".to_string(),
            ChunkMode::Fixed => format!("fixed{:.2}", self.window),
        }
    }
}

/// An extracted audio excerpt ending at a sample's speaker change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub sample_id: String,
    /// Interval within the source media, seconds.
    pub start: f64,
    pub end: f64,
    /// Path of the extracted 16 kHz mono PCM artifact.
    pub waveform_ref: PathBuf,
}

impl Chunk {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Compute the chunk interval `[start, end)` for a sample without touching
/// any media.
pub fn chunk_interval(sample: &Sample, spec: &ChunkSpec) -> Result<(f64, f64), PreprocessError> {
    let (start, end) = match spec.mode {
        ChunkMode::Ref => (sample.segment_start, sample.segment_end),
        ChunkMode::Fixed => (
            (sample.change_time - spec.window).max(0.0),
            sample.change_time,
        ),
    };
    if end <= start {
        return Err(PreprocessError::EmptyInterval {
            sample_id: sample.sample_id.clone(),
        });
    }
    Ok((start, end))
}

/// Cut the chunk out of the sample's media, resample to 16 kHz mono, and
/// store it under `out_dir`. Re-running with an existing artifact reuses it.
pub fn make_chunk(
    sample: &Sample,
    spec: &ChunkSpec,
    manifest_dir: &Path,
    out_dir: &Path,
) -> Result<Chunk, PreprocessError> {
    let (start, end) = chunk_interval(sample, spec)?;
    let artifact = out_dir.join(format!("{}__{}.wav", sample.sample_id, spec.tag()));
    if !artifact.exists() {
        let media = resolve_media_path(manifest_dir, sample);
        let wave = Waveform::read_wav(&media).map_err(|source| {
            PreprocessError::MediaUnreadable {
                sample_id: sample.sample_id.clone(),
                source,
            }
        })?;
        let cut = wave.slice_seconds(start, end).resampled(ARTIFACT_RATE);
        cut.write_wav(&artifact)?;
    }
    Ok(Chunk {
        sample_id: sample.sample_id.clone(),
        start,
        end,
        waveform_ref: artifact,
    })
}

/// Extract chunks for a whole corpus and write an index at
/// `out_dir/chunks.jsonl`.
pub fn extract_chunks(
    corpus: &Corpus,
    spec: &ChunkSpec,
    manifest_dir: &Path,
    out_dir: &Path,
) -> Result<Vec<Chunk>, PreprocessError> {
    std::fs::create_dir_all(out_dir)?;
    let mut chunks = Vec::with_capacity(corpus.len());
    for sample in &corpus.samples {
        chunks.push(make_chunk(sample, spec, manifest_dir, out_dir)?);
    }
    let mut index = Vec::new();
    for c in &chunks {
        serde_json::to_writer(&mut index, c).expect("chunk serialization cannot fail");
        index.push(b'\n');
    }
    crate::util::atomic_write(&out_dir.join("chunks.jsonl"), &index)?;
    Ok(chunks)
}

/// Where a transcript came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranscriptSource {
    Auto,
    Manual,
}

/// A transcript, stored byte-identical to what its source produced —
/// including recognizable ASR artifacts. The empty string is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub sample_id: String,
    pub source: TranscriptSource,
    pub text: String,
}

/// Persistent transcript cache: one JSON file per key under a directory.
/// Writes are atomic, so concurrent workers can share a cache directory.
pub struct TranscriptCache {
    dir: PathBuf,
}

impl TranscriptCache {
    pub fn new(dir: &Path) -> std::io::Result<TranscriptCache> {
        std::fs::create_dir_all(dir)?;
        Ok(TranscriptCache {
            dir: dir.to_path_buf(),
        })
    }

    /// Cache key over sample id, chunk interval, and client identity.
    pub fn key(sample_id: &str, start: f64, end: f64, client_identity: &str) -> String {
        crate::util::sha256_hex(&[
            b"transcript-cache",
            sample_id.as_bytes(),
            &start.to_le_bytes(),
            &end.to_le_bytes(),
            client_identity.as_bytes(),
        ])
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Look up a cached transcript. Unreadable or corrupt entries count as
    /// misses; the caller will rewrite them.
    pub fn get(&self, key: &str) -> Option<Transcript> {
        let bytes = std::fs::read(self.path(key)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn put(&self, key: &str, transcript: &Transcript) -> std::io::Result<()> {
        let bytes = serde_json::to_vec(transcript).expect("transcript serialization cannot fail");
        crate::util::atomic_write(&self.path(key), &bytes)
    }
}

/// Transcribe a chunk through the cache. Repeat calls with the same
/// (sample, interval, client) never re-invoke the client; the text is
/// stored verbatim, whatever the engine produced.
pub fn transcribe(
    chunk: &Chunk,
    client: &dyn AsrClient,
    cache: &TranscriptCache,
) -> Result<Transcript, PreprocessError> {
    let key = TranscriptCache::key(&chunk.sample_id, chunk.start, chunk.end, &client.identity());
    if let Some(hit) = cache.get(&key) {
        return Ok(hit);
    }
    let wave =
        Waveform::read_wav(&chunk.waveform_ref).map_err(|source| PreprocessError::MediaUnreadable {
            sample_id: chunk.sample_id.clone(),
            source,
        })?;
    let text = client
        .transcribe(&wave)
        .map_err(|source| PreprocessError::AsrUnavailable {
            sample_id: chunk.sample_id.clone(),
            source,
        })?;
    let transcript = Transcript {
        sample_id: chunk.sample_id.clone(),
        source: TranscriptSource::Auto,
        text,
    };
    cache.put(&key, &transcript)?;
    Ok(transcript)
}

/// The three input settings: chunking regime × transcript source.
///
/// Only these three exist; in particular there is no fixed-window manual
/// setting, because manual transcripts are tied to the annotated segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InputSetting {
    #[serde(rename = "ref_auto")]
    RefAuto,
    #[serde(rename = "ref_man")]
    RefMan,
    #[serde(rename = "3s_auto")]
    ThreeSAuto,
}

impl InputSetting {
    pub const ALL: [InputSetting; 3] = [
        InputSetting::RefAuto,
        InputSetting::RefMan,
        InputSetting::ThreeSAuto,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InputSetting::RefAuto => "ref_auto",
            InputSetting::RefMan => "ref_man",
            InputSetting::ThreeSAuto => "3s_auto",
        }
    }

    pub fn chunk_spec(self, window: f64) -> ChunkSpec {
        match self {
            InputSetting::RefAuto | InputSetting::RefMan => ChunkSpec::reference(),
            InputSetting::ThreeSAuto => ChunkSpec::fixed(window),
        }
    }

    pub fn transcript_source(self) -> TranscriptSource {
        match self {
            InputSetting::RefMan => TranscriptSource::Manual,
            InputSetting::RefAuto | InputSetting::ThreeSAuto => TranscriptSource::Auto,
        }
    }
}

impl std::fmt::Display for InputSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InputSetting {
    type Err = PreprocessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ref_auto" => Ok(InputSetting::RefAuto),
            "ref_man" => Ok(InputSetting::RefMan),
            "3s_auto" => Ok(InputSetting::ThreeSAuto),
            other => Err(PreprocessError::UnsupportedSetting(other.to_string())),
        }
    }
}

/// Everything needed to turn a (sample, setting) pair into a transcript.
pub struct TranscriptResolver<'a> {
    pub manifest_dir: &'a Path,
    pub chunk_dir: &'a Path,
    /// Fixed-mode window in seconds.
    pub window: f64,
    pub client: &'a dyn AsrClient,
    pub cache: &'a TranscriptCache,
}

impl TranscriptResolver<'_> {
    /// Manual settings read the annotation; auto settings transcribe the
    /// corresponding chunk through the cache.
    pub fn resolve_transcript(
        &self,
        sample: &Sample,
        setting: InputSetting,
    ) -> Result<Transcript, PreprocessError> {
        match setting.transcript_source() {
            TranscriptSource::Manual => {
                let text = sample.manual_transcript.clone().ok_or_else(|| {
                    PreprocessError::ManualTranscriptMissing {
                        sample_id: sample.sample_id.clone(),
                    }
                })?;
                Ok(Transcript {
                    sample_id: sample.sample_id.clone(),
                    source: TranscriptSource::Manual,
                    text,
                })
            }
            TranscriptSource::Auto => {
                let spec = setting.chunk_spec(self.window);
                let chunk = make_chunk(sample, &spec, self.manifest_dir, self.chunk_dir)?;
                transcribe(&chunk, self.client, self.cache)
            }
        }
    }
}

/// Read a `chunks.jsonl` index written by [`extract_chunks`].
pub fn load_chunk_index(path: &Path) -> Result<Vec<Chunk>, PreprocessError> {
    let content = std::fs::read_to_string(path)?;
    let mut chunks = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let chunk: Chunk =
            serde_json::from_str(line).map_err(|e| PreprocessError::CorruptRecord {
                path: format!("{}:{}", path.display(), idx + 1),
                detail: e.to_string(),
            })?;
        chunks.push(chunk);
    }
    Ok(chunks)
}
