//! Embedding providers: turn a chunk and/or transcript into fixed-width
//! 768-dimensional vectors.
//!
//! Providers are pluggable. The crate ships deterministic stubs (for
//! synthetic corpora and tests) and a command adapter for wiring in real
//! pretrained encoders as external processes; embeddings are cached on disk
//! so a full experiment grid never recomputes them while providers are
//! frozen.

pub mod cache;
pub mod command;
pub mod stub;

pub use cache::{EmbeddingCache, EmbeddingMeta};
pub use command::CommandEncoder;
pub use stub::{StubAudioEncoder, StubTextEncoder};

use crate::audio::Waveform;
use crate::preprocess::{Chunk, Transcript};
use serde::{Deserialize, Serialize};

/// Width of every embedding, both modalities.
pub const EMBED_DIM: usize = 768;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("sample `{sample_id}`: chunk waveform is empty")]
    EmptyWaveform { sample_id: String },
    #[error("provider `{provider}` encodes {actual}, not {expected}")]
    WrongModality {
        provider: String,
        expected: Modality,
        actual: Modality,
    },
    #[error("provider `{provider}` failed: {detail}")]
    ProviderFailure { provider: String, detail: String },
    #[error("provider `{provider}` returned a bad vector: {detail}")]
    BadVector { provider: String, detail: String },
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Text,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Audio => "audio",
            Modality::Text => "text",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "audio" => Ok(Modality::Audio),
            "text" => Ok(Modality::Text),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// A validated 768-dimensional embedding: right length, all entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn from_vec(v: Vec<f64>) -> Result<Embedding, String> {
        if v.len() != EMBED_DIM {
            return Err(format!("expected {EMBED_DIM} entries, got {}", v.len()));
        }
        if let Some(idx) = v.iter().position(|x| !x.is_finite()) {
            return Err(format!("entry {idx} is not finite"));
        }
        Ok(Embedding(v))
    }

    pub fn zeros() -> Embedding {
        Embedding(vec![0.0; EMBED_DIM])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EMBED_DIM * 8);
        for &x in &self.0 {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Embedding, String> {
        if bytes.len() != EMBED_DIM * 8 {
            return Err(format!(
                "expected {} bytes, got {}",
                EMBED_DIM * 8,
                bytes.len()
            ));
        }
        let v: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Embedding::from_vec(v)
    }
}

/// Per-sample embeddings under one input setting. Either modality may be
/// absent when only part of the pipeline has run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPair {
    pub sample_id: String,
    pub audio_vec: Option<Embedding>,
    pub text_vec: Option<Embedding>,
}

/// An embedding model for one modality.
///
/// Providers must be deterministic in inference mode: the same input maps
/// to the same vector for a fixed provider state. `name()` doubles as the
/// cache-key component, so it must change whenever outputs could.
pub trait EncoderProvider: Send + Sync {
    fn name(&self) -> String;
    fn modality(&self) -> Modality;
    /// Whether the provider participates in gradient updates. Everything
    /// shipped here is frozen; the flag is the extension point.
    fn trainable(&self) -> bool {
        false
    }
    fn encode_waveform(&self, _audio: &Waveform) -> Result<Vec<f64>, EncoderError> {
        Err(EncoderError::WrongModality {
            provider: self.name(),
            expected: Modality::Audio,
            actual: self.modality(),
        })
    }
    fn encode_text(&self, _text: &str) -> Result<Vec<f64>, EncoderError> {
        Err(EncoderError::WrongModality {
            provider: self.name(),
            expected: Modality::Text,
            actual: self.modality(),
        })
    }
}

/// Embed a chunk's waveform. The artifact is read from disk, so the chunk
/// must have been extracted first.
pub fn encode_audio(
    chunk: &Chunk,
    provider: &dyn EncoderProvider,
) -> Result<Embedding, EncoderError> {
    if provider.modality() != Modality::Audio {
        return Err(EncoderError::WrongModality {
            provider: provider.name(),
            expected: Modality::Audio,
            actual: provider.modality(),
        });
    }
    let wave = Waveform::read_wav(&chunk.waveform_ref)?;
    if wave.is_empty() {
        return Err(EncoderError::EmptyWaveform {
            sample_id: chunk.sample_id.clone(),
        });
    }
    let raw = provider.encode_waveform(&wave)?;
    Embedding::from_vec(raw).map_err(|detail| EncoderError::BadVector {
        provider: provider.name(),
        detail,
    })
}

/// Embed a transcript. Empty text is legal and maps to the provider's null
/// embedding.
pub fn encode_text(
    transcript: &Transcript,
    provider: &dyn EncoderProvider,
) -> Result<Embedding, EncoderError> {
    if provider.modality() != Modality::Text {
        return Err(EncoderError::WrongModality {
            provider: provider.name(),
            expected: Modality::Text,
            actual: provider.modality(),
        });
    }
    let raw = provider.encode_text(&transcript.text)?;
    Embedding::from_vec(raw).map_err(|detail| EncoderError::BadVector {
        provider: provider.name(),
        detail,
    })
}

/// Build a provider from a name:
///
/// * `stub` — deterministic stub encoder for the given modality
/// * `command:<program> [args…]` — external-process adapter
pub fn resolve_encoder(
    name: &str,
    modality: Modality,
) -> Result<Box<dyn EncoderProvider>, EncoderError> {
    if name == "stub" {
        return Ok(match modality {
            Modality::Audio => Box::new(StubAudioEncoder),
            Modality::Text => Box::new(StubTextEncoder),
        });
    }
    if let Some(rest) = name.strip_prefix("command:") {
        let mut parts = rest.split_whitespace();
        let program = parts.next().ok_or_else(|| EncoderError::ProviderFailure {
            provider: name.to_string(),
            detail: "empty command".into(),
        })?;
        return Ok(Box::new(CommandEncoder {
            program: program.to_string(),
            args: parts.map(String::from).collect(),
            modality,
        }));
    }
    Err(EncoderError::ProviderFailure {
        provider: name.to_string(),
        detail: "unknown provider; expected stub or command:<program [args]>".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_validation_rejects_bad_vectors() {
        assert!(Embedding::from_vec(vec![0.0; 767]).is_err());
        let mut v = vec![0.0; EMBED_DIM];
        v[5] = f64::NAN;
        assert!(Embedding::from_vec(v).is_err());
        assert!(Embedding::from_vec(vec![0.5; EMBED_DIM]).is_ok());
    }

    #[test]
    fn embedding_bytes_round_trip() {
        let v: Vec<f64> = (0..EMBED_DIM).map(|i| (i as f64).sin()).collect();
        let e = Embedding::from_vec(v).unwrap();
        let back = Embedding::from_le_bytes(&e.to_le_bytes()).unwrap();
        assert_eq!(e, back);
        assert!(Embedding::from_le_bytes(&[0u8; 16]).is_err());
    }

    #[test]
    fn modality_mismatch_is_rejected() {
        let t = Transcript {
            sample_id: "a".into(),
            source: crate::preprocess::TranscriptSource::Manual,
            text: "bonjour".into(),
        };
        let err = encode_text(&t, &StubAudioEncoder).unwrap_err();
        assert!(matches!(err, EncoderError::WrongModality { .. }));
    }

    #[test]
    fn resolve_knows_stub_and_command() {
        assert_eq!(
            resolve_encoder("stub", Modality::Audio).unwrap().name(),
            "stub-audio-v1"
        );
        assert_eq!(
            resolve_encoder("stub", Modality::Text).unwrap().name(),
            "stub-text-v1"
        );
        assert!(resolve_encoder("command:myencoder --dim 768", Modality::Text).is_ok());
        assert!(resolve_encoder("wav2vec-like", Modality::Audio).is_err());
    }
}
