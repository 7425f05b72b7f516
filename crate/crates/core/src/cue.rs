//! Wire contract for the synthetic terminality cue.
//!
//! Synthetic corpora embed a signed cue in both modalities so that the
//! deterministic stub components can recover it without any learned model:
//!
//! * **Audio** carries the cue as a DC offset of `signed_cue * DC_AMPLITUDE`
//!   applied to the whole media file, so any chunk of the file — reference
//!   or fixed-window — preserves it.
//! * **Text** carries the cue as a token of the form `cue+0.8000` embedded
//!   among filler words.
//!
//! The corpus generator writes the cue, the stub ASR engine re-emits it from
//! the waveform, and the stub encoders surface it on coordinate 0 of their
//! embeddings. Keeping the three in one place makes the contract between
//! them explicit.

/// DC level of the audio cue at full strength (fraction of full scale).
pub const DC_AMPLITUDE: f64 = 0.25;

/// Maximum jitter a stub encoder adds to the recovered cue on coordinate 0.
pub const ENCODER_CUE_JITTER: f64 = 0.05;

/// Amplitude of the seeded noise on the remaining embedding coordinates.
pub const ENCODER_BACKGROUND: f64 = 0.25;

/// Signed cue value: `+strength` for a terminal turn, `-strength` otherwise.
pub fn signed_cue(terminal: bool, strength: f64) -> f64 {
    if terminal {
        strength
    } else {
        -strength
    }
}

/// Render a cue value as its transcript token, e.g. `cue-0.2500`.
pub fn cue_token(value: f64) -> String {
    format!("cue{value:+.4}")
}

/// Scan a transcript for a cue token and return its value if present.
pub fn parse_cue(text: &str) -> Option<f64> {
    for word in text.split_whitespace() {
        if let Some(rest) = word.strip_prefix("cue") {
            if let Ok(v) = rest.parse::<f64>() {
                return Some(v);
            }
        }
    }
    None
}

/// Recover the signed cue from a waveform by reading its mean level.
///
/// Tone and dither components of synthetic audio average out over any
/// window of a few hundred samples, leaving the DC offset; the result is
/// clamped to a sane range so malformed audio cannot blow up an embedding.
pub fn decode_waveform_cue(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    (mean / DC_AMPLITUDE).clamp(-1.5, 1.5)
}
