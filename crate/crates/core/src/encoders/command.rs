//! External-process encoder adapter.
//!
//! Wire in a real pretrained encoder without linking it: the adapter runs a
//! command per input and parses its stdout as 768 numbers (whitespace
//! separated, or a JSON array). Audio inputs are staged as a temporary WAV
//! file whose path becomes the last argument; text inputs are piped to
//! stdin.

use super::{EncoderError, EncoderProvider, Modality, EMBED_DIM};
use crate::audio::Waveform;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

pub struct CommandEncoder {
    pub program: String,
    pub args: Vec<String>,
    pub modality: Modality,
}

impl CommandEncoder {
    fn failure(&self, detail: impl Into<String>) -> EncoderError {
        EncoderError::ProviderFailure {
            provider: self.name(),
            detail: detail.into(),
        }
    }

    fn parse_stdout(&self, stdout: &[u8]) -> Result<Vec<f64>, EncoderError> {
        let text = std::str::from_utf8(stdout)
            .map_err(|_| self.failure("stdout is not valid UTF-8"))?;
        let trimmed = text.trim();
        let values: Vec<f64> = if trimmed.starts_with('[') {
            serde_json::from_str(trimmed)
                .map_err(|e| self.failure(format!("bad JSON vector: {e}")))?
        } else {
            trimmed
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|e| self.failure(format!("bad number `{tok}`: {e}")))
                })
                .collect::<Result<_, _>>()?
        };
        if values.len() != EMBED_DIM {
            return Err(self.failure(format!(
                "expected {EMBED_DIM} values on stdout, got {}",
                values.len()
            )));
        }
        Ok(values)
    }

    fn temp_wav_path() -> PathBuf {
        use std::sync::atomic::{AtomicU64, Ordering};
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        std::env::temp_dir().join(format!("trp-enc-{}-{n}.wav", std::process::id()))
    }

    fn run(&self, extra_arg: Option<&PathBuf>, stdin_text: Option<&str>) -> Result<Vec<f64>, EncoderError> {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args);
        if let Some(path) = extra_arg {
            cmd.arg(path);
        }
        cmd.stdin(if stdin_text.is_some() {
            Stdio::piped()
        } else {
            Stdio::null()
        });
        cmd.stdout(Stdio::piped());
        cmd.stderr(Stdio::piped());
        let mut child = cmd
            .spawn()
            .map_err(|e| self.failure(format!("cannot launch: {e}")))?;
        if let Some(text) = stdin_text {
            let mut stdin = child.stdin.take().expect("stdin was piped");
            stdin
                .write_all(text.as_bytes())
                .map_err(|e| self.failure(format!("cannot write stdin: {e}")))?;
        }
        let output = child
            .wait_with_output()
            .map_err(|e| self.failure(format!("cannot collect output: {e}")))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            let snippet: String = stderr.chars().take(200).collect();
            return Err(self.failure(format!("exited with {}: {snippet}", output.status)));
        }
        self.parse_stdout(&output.stdout)
    }
}

impl EncoderProvider for CommandEncoder {
    fn name(&self) -> String {
        format!(
            "command-{}({} {})",
            self.modality,
            self.program,
            self.args.join(" ")
        )
    }

    fn modality(&self) -> Modality {
        self.modality
    }

    fn encode_waveform(&self, audio: &Waveform) -> Result<Vec<f64>, EncoderError> {
        if self.modality != Modality::Audio {
            return Err(EncoderError::WrongModality {
                provider: self.name(),
                expected: Modality::Audio,
                actual: self.modality,
            });
        }
        let wav_path = Self::temp_wav_path();
        audio
            .write_wav(&wav_path)
            .map_err(|e| self.failure(format!("cannot stage audio: {e}")))?;
        let result = self.run(Some(&wav_path), None);
        let _ = std::fs::remove_file(&wav_path);
        result
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>, EncoderError> {
        if self.modality != Modality::Text {
            return Err(EncoderError::WrongModality {
                provider: self.name(),
                expected: Modality::Text,
                actual: self.modality,
            });
        }
        self.run(None, Some(text))
    }
}
