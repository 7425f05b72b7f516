//! Deterministic stub encoders for synthetic corpora.
//!
//! Contract, shared with the synthetic corpus generator (see the cue
//! module): for a synthetic sample with label sign `s` (+1 Terminal, −1
//! NonTerminal) and cue strength `c`, coordinate 0 of the produced vector
//! is `s·c + ε` with `|ε| ≤ 0.1`, and the remaining 767 coordinates are
//! seeded noise carrying no label information. Classes are therefore
//! linearly separable whenever `c` clearly exceeds the noise bound, and
//! indistinguishable at `c = 0`.

use super::{EncoderError, EncoderProvider, Modality, EMBED_DIM};
use crate::audio::Waveform;
use crate::cue;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn noise_vector(seed: u64, leading: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = rng.random_range(-cue::ENCODER_CUE_JITTER..=cue::ENCODER_CUE_JITTER);
    let mut v = Vec::with_capacity(EMBED_DIM);
    v.push(leading + jitter);
    for _ in 1..EMBED_DIM {
        v.push(rng.random_range(-cue::ENCODER_BACKGROUND..=cue::ENCODER_BACKGROUND));
    }
    v
}

/// Stub audio encoder: recovers the cue from the waveform's DC level.
pub struct StubAudioEncoder;

impl EncoderProvider for StubAudioEncoder {
    fn name(&self) -> String {
        "stub-audio-v1".to_string()
    }

    fn modality(&self) -> Modality {
        Modality::Audio
    }

    fn encode_waveform(&self, audio: &Waveform) -> Result<Vec<f64>, EncoderError> {
        if audio.is_empty() {
            return Err(EncoderError::EmptyWaveform {
                sample_id: String::new(),
            });
        }
        let cue_value = cue::decode_waveform_cue(&audio.samples);
        let seed = crate::util::derive_seed("stub-audio-v1", &[&audio.content_hash()]);
        Ok(noise_vector(seed, cue_value))
    }
}

/// Stub text encoder: recovers the cue from the transcript's cue token.
/// Empty text maps to the all-zero null embedding.
pub struct StubTextEncoder;

impl EncoderProvider for StubTextEncoder {
    fn name(&self) -> String {
        "stub-text-v1".to_string()
    }

    fn modality(&self) -> Modality {
        Modality::Text
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>, EncoderError> {
        if text.is_empty() {
            return Ok(vec![0.0; EMBED_DIM]);
        }
        let cue_value = cue::parse_cue(text).unwrap_or(0.0);
        let seed = crate::util::derive_seed("stub-text-v1", &[text]);
        Ok(noise_vector(seed, cue_value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Label, SynthConfig};
    use crate::encoders::{encode_audio, encode_text};
    use crate::preprocess::{make_chunk, ChunkSpec, Transcript, TranscriptSource};

    #[test]
    fn stub_vectors_recover_the_signed_cue() {
        let dir = tempfile::tempdir().unwrap();
        let cue_strength = 0.8;
        let corpus = generate_synthetic(
            &SynthConfig {
                n_samples: 6,
                n_shows: 2,
                cue_strength,
                ..SynthConfig::default()
            },
            dir.path(),
        )
        .unwrap();
        let chunk_dir = dir.path().join("chunks");
        for sample in &corpus.samples {
            let s = if sample.label == Label::Terminal {
                1.0
            } else {
                -1.0
            };
            for spec in [ChunkSpec::reference(), ChunkSpec::fixed(3.0)] {
                let chunk = make_chunk(sample, &spec, dir.path(), &chunk_dir).unwrap();
                let emb = encode_audio(&chunk, &StubAudioEncoder).unwrap();
                let eps = emb.as_slice()[0] - s * cue_strength;
                assert!(eps.abs() <= 0.1, "audio cue error {eps}");
            }
            let t = Transcript {
                sample_id: sample.sample_id.clone(),
                source: TranscriptSource::Manual,
                text: sample.manual_transcript.clone().unwrap(),
            };
            let emb = encode_text(&t, &StubTextEncoder).unwrap();
            let eps = emb.as_slice()[0] - s * cue_strength;
            assert!(eps.abs() <= 0.1, "text cue error {eps}");
        }
    }

    #[test]
    fn stub_encoders_are_deterministic() {
        let samples: Vec<f64> = (0..16000).map(|i| 0.1 + (i as f64 * 0.01).cos() * 0.02).collect();
        let wave = Waveform::new(samples, 16000);
        let a = StubAudioEncoder.encode_waveform(&wave).unwrap();
        let b = StubAudioEncoder.encode_waveform(&wave).unwrap();
        assert_eq!(a, b);
        let t1 = StubTextEncoder.encode_text("euh alors cue+0.5000").unwrap();
        let t2 = StubTextEncoder.encode_text("euh alors cue+0.5000").unwrap();
        assert_eq!(t1, t2);
        // Different inputs decorrelate the noise coordinates.
        let t3 = StubTextEncoder.encode_text("euh alors cue+0.5001").unwrap();
        assert_ne!(t1[10], t3[10]);
    }

    #[test]
    fn empty_text_is_the_null_embedding() {
        let v = StubTextEncoder.encode_text("").unwrap();
        assert_eq!(v, vec![0.0; EMBED_DIM]);
    }

    #[test]
    fn text_without_cue_token_has_zero_cue_coordinate() {
        let v = StubTextEncoder.encode_text("bonjour tout le monde").unwrap();
        assert!(v[0].abs() <= cue::ENCODER_CUE_JITTER);
    }

    #[test]
    fn empty_waveform_is_an_error() {
        let wave = Waveform::new(Vec::new(), 16000);
        assert!(matches!(
            StubAudioEncoder.encode_waveform(&wave),
            Err(EncoderError::EmptyWaveform { .. })
        ));
    }
}
