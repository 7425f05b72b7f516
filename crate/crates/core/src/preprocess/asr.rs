//! ASR client interface and the shipped back ends: a deterministic stub, a
//! recording/replay store for tests and offline runs, a local command
//! adapter, and a remote HTTP endpoint adapter.

use crate::audio::Waveform;
use crate::cue;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum AsrError {
    #[error("client `{client}`: {detail}")]
    Unavailable { client: String, detail: String },
}

impl AsrError {
    fn unavailable(client: &str, detail: impl Into<String>) -> AsrError {
        AsrError::Unavailable {
            client: client.to_string(),
            detail: detail.into(),
        }
    }
}

/// A speech recognizer. Implementations must be safe to call from parallel
/// workers.
pub trait AsrClient: Send + Sync {
    /// Stable identity (engine + parameters). Cached transcripts are keyed
    /// by it, so it must change whenever outputs could change.
    fn identity(&self) -> String;

    /// Transcribe a waveform. The empty string is a legal result.
    fn transcribe(&self, audio: &Waveform) -> Result<String, AsrError>;
}

/// Deterministic stand-in engine for synthetic corpora: it reads the cue
/// level off the waveform and emits filler words plus the cue token, so
/// downstream text encoders can recover the signal without a real model.
pub struct StubAsr;

const STUB_FILLERS: [&str; 8] = [
    "euh", "alors", "oui", "donc", "voila", "bon", "enfin", "hein",
];

impl AsrClient for StubAsr {
    fn identity(&self) -> String {
        "stub-asr-v1".to_string()
    }

    fn transcribe(&self, audio: &Waveform) -> Result<String, AsrError> {
        if audio.is_empty() {
            return Ok(String::new());
        }
        let cue_value = cue::decode_waveform_cue(&audio.samples);
        let seed = crate::util::derive_seed("stub-asr", &[&audio.content_hash()]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_words = 1 + ((audio.duration_secs() * 2.0) as usize).min(8);
        let mut words: Vec<String> = (0..n_words)
            .map(|_| STUB_FILLERS[rng.random_range(0..STUB_FILLERS.len())].to_string())
            .collect();
        words.push(cue::cue_token(cue_value));
        Ok(words.join(" "))
    }
}

/// Recording/replay transcript store.
///
/// In record mode it forwards to an inner client and saves each output
/// keyed by waveform content hash; in replay mode it serves only saved
/// outputs, so tests and offline runs never touch a real engine. The inner
/// client's identity is persisted so cache keys match across phases.
pub struct ReplayAsr {
    dir: PathBuf,
    identity: String,
    inner: Option<Box<dyn AsrClient>>,
}

impl ReplayAsr {
    pub fn record(dir: &Path, inner: Box<dyn AsrClient>) -> std::io::Result<ReplayAsr> {
        std::fs::create_dir_all(dir)?;
        let identity = inner.identity();
        crate::util::atomic_write(&dir.join("identity.txt"), identity.as_bytes())?;
        Ok(ReplayAsr {
            dir: dir.to_path_buf(),
            identity,
            inner: Some(inner),
        })
    }

    pub fn replay(dir: &Path) -> std::io::Result<ReplayAsr> {
        let identity = std::fs::read_to_string(dir.join("identity.txt")).map_err(|e| {
            std::io::Error::new(
                e.kind(),
                format!(
                    "{}: not a replay store (missing identity.txt): {e}",
                    dir.display()
                ),
            )
        })?;
        Ok(ReplayAsr {
            dir: dir.to_path_buf(),
            identity,
            inner: None,
        })
    }

    fn entry_path(&self, audio: &Waveform) -> PathBuf {
        self.dir.join(format!("{}.txt", audio.content_hash()))
    }
}

impl AsrClient for ReplayAsr {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn transcribe(&self, audio: &Waveform) -> Result<String, AsrError> {
        let path = self.entry_path(audio);
        match std::fs::read(&path) {
            Ok(bytes) => String::from_utf8(bytes).map_err(|_| {
                AsrError::unavailable("replay", format!("{}: not valid UTF-8", path.display()))
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let inner = self.inner.as_deref().ok_or_else(|| {
                    AsrError::unavailable(
                        "replay",
                        format!("no recorded transcript at {}", path.display()),
                    )
                })?;
                let text = inner.transcribe(audio)?;
                crate::util::atomic_write(&path, text.as_bytes()).map_err(|e| {
                    AsrError::unavailable("replay", format!("cannot record transcript: {e}"))
                })?;
                Ok(text)
            }
            Err(e) => Err(AsrError::unavailable("replay", e.to_string())),
        }
    }
}

/// Adapter for a local transcription command. The waveform is written to a
/// temporary WAV file whose path is appended to the argument list; stdout
/// is the transcript, taken verbatim.
pub struct CommandAsr {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandAsr {
    fn temp_wav_path() -> PathBuf {
        use std::sync::atomic::{AtomicU64, Ordering};
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        std::env::temp_dir().join(format!("trp-asr-{}-{n}.wav", std::process::id()))
    }
}

impl AsrClient for CommandAsr {
    fn identity(&self) -> String {
        format!("command({} {})", self.program, self.args.join(" "))
    }

    fn transcribe(&self, audio: &Waveform) -> Result<String, AsrError> {
        let client = self.identity();
        let wav_path = Self::temp_wav_path();
        audio
            .write_wav(&wav_path)
            .map_err(|e| AsrError::unavailable(&client, format!("cannot stage audio: {e}")))?;
        let output = std::process::Command::new(&self.program)
            .args(&self.args)
            .arg(&wav_path)
            .output();
        let _ = std::fs::remove_file(&wav_path);
        let output =
            output.map_err(|e| AsrError::unavailable(&client, format!("cannot launch: {e}")))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            let snippet: String = stderr.chars().take(200).collect();
            return Err(AsrError::unavailable(
                &client,
                format!("exited with {}: {snippet}", output.status),
            ));
        }
        // Valid UTF-8 passes through byte-identical; anything else is
        // replaced rather than rejected, since real engines occasionally
        // emit stray bytes.
        Ok(String::from_utf8_lossy(&output.stdout).into_owned())
    }
}

/// Adapter for a remote transcription endpoint: POSTs the chunk as a WAV
/// body and takes the response body as the transcript.
pub struct HttpAsr {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpAsr {
    pub fn new(endpoint: &str) -> HttpAsr {
        let agent = ureq::AgentBuilder::new()
            .timeout(std::time::Duration::from_secs(300))
            .build();
        HttpAsr {
            endpoint: endpoint.to_string(),
            agent,
        }
    }
}

/// Environment variable naming the remote ASR endpoint for `--asr http`.
pub const ASR_ENDPOINT_VAR: &str = "TRP_ASR_ENDPOINT";

impl AsrClient for HttpAsr {
    fn identity(&self) -> String {
        format!("http({})", self.endpoint)
    }

    fn transcribe(&self, audio: &Waveform) -> Result<String, AsrError> {
        let client = self.identity();
        let bytes = audio
            .to_wav_bytes()
            .map_err(|e| AsrError::unavailable(&client, format!("cannot encode audio: {e}")))?;
        let response = self
            .agent
            .post(&self.endpoint)
            .set("Content-Type", "audio/wav")
            .send_bytes(&bytes)
            .map_err(|e| AsrError::unavailable(&client, e.to_string()))?;
        response
            .into_string()
            .map_err(|e| AsrError::unavailable(&client, format!("cannot read response: {e}")))
    }
}

/// Build an ASR client from a name:
///
/// * `stub` — the deterministic stub engine
/// * `replay:<dir>` — replay a recorded transcript store
/// * `command:<program> [args…]` — local command adapter
/// * `http` — remote endpoint named by `TRP_ASR_ENDPOINT`
/// * an `http://` or `https://` URL — remote endpoint, spelled inline
pub fn resolve_asr_client(name: &str) -> Result<Box<dyn AsrClient>, AsrError> {
    if name == "stub" {
        return Ok(Box::new(StubAsr));
    }
    if let Some(dir) = name.strip_prefix("replay:") {
        return ReplayAsr::replay(Path::new(dir))
            .map(|c| Box::new(c) as Box<dyn AsrClient>)
            .map_err(|e| AsrError::unavailable(name, e.to_string()));
    }
    if let Some(rest) = name.strip_prefix("command:") {
        let mut parts = rest.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| AsrError::unavailable(name, "empty command"))?;
        return Ok(Box::new(CommandAsr {
            program: program.to_string(),
            args: parts.map(String::from).collect(),
        }));
    }
    if name == "http" {
        let endpoint = std::env::var(ASR_ENDPOINT_VAR).map_err(|_| {
            AsrError::unavailable(name, format!("{ASR_ENDPOINT_VAR} is not set"))
        })?;
        return Ok(Box::new(HttpAsr::new(&endpoint)));
    }
    if name.starts_with("http://") || name.starts_with("https://") {
        return Ok(Box::new(HttpAsr::new(name)));
    }
    Err(AsrError::unavailable(
        name,
        "unknown ASR client; expected stub, replay:<dir>, command:<program [args]>, http, or an http(s) URL",
    ))
}
