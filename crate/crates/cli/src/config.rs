//! Pipeline run configuration: a single TOML or JSON document, with CLI
//! flags taking precedence over file values and file values over built-in
//! defaults. The resolved document is hashed and that hash is embedded in
//! every artifact the run emits.

use crate::errors::{Classify, CliError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use trp_core::experiment::{GridSpec, InputSetting};
use trp_core::heads::Architecture;
use trp_core::util::sha256_hex;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything a pipeline run needs. Unknown keys in a config file are
/// rejected so typos fail loudly instead of silently using defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Corpus manifest (JSON Lines), one annotated speaker change per line.
    pub manifest: Option<PathBuf>,
    /// Root of the output tree; every artifact lands under it.
    pub out: Option<PathBuf>,
    /// Transcription client name (`stub`, `command:<prog>`, `http:<url>`,
    /// or a replay directory).
    pub asr: String,
    /// Audio embedding provider name (`stub` or `command:<prog> [args]`).
    pub audio_provider: String,
    /// Text embedding provider name (`stub` or `command:<prog> [args]`).
    pub text_provider: String,
    /// Fixed-window chunk length in seconds.
    pub window: f64,
    /// Worker threads; 0 means one per available CPU.
    pub jobs: usize,
    /// The training/evaluation grid: architectures, input settings, seeds,
    /// base seed, and the shared head/training hyperparameters.
    pub grid: GridSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            out: None,
            asr: "stub".to_string(),
            audio_provider: "stub".to_string(),
            text_provider: "stub".to_string(),
            window: 3.0,
            jobs: 0,
            grid: GridSpec::standard(),
        }
    }
}

impl RunConfig {
    /// Hash of the resolved configuration document (canonical JSON bytes).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialization cannot fail");
        sha256_hex(&[&bytes])
    }

    pub fn manifest_path(&self) -> Result<&Path, CliError> {
        self.manifest
            .as_deref()
            .ok_or_else(|| CliError::Config("no manifest given (flag --manifest or config key `manifest`)".into()))
    }

    pub fn out_path(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory given (flag --out or config key `out`)".into()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let manifest = self.manifest_path()?;
        if !manifest.is_file() {
            return Err(CliError::Config(format!(
                "manifest {} does not exist or is not a file",
                manifest.display()
            )));
        }
        self.out_path()?;
        if !(self.window.is_finite() && self.window > 0.0) {
            return Err(CliError::Config(format!(
                "window must be a positive number of seconds, got {}",
                self.window
            )));
        }
        self.grid.validate().or_config("grid configuration")?;
        Ok(())
    }
}

/// Load a config document; the format is chosen by extension (`.json` is
/// JSON, everything else is TOML).
pub fn load_config_file(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .or_config(format!("reading config file {}", path.display()))?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        serde_json::from_str(&text).or_config(format!("parsing JSON config {}", path.display()))
    } else {
        toml::from_str(&text).or_config(format!("parsing TOML config {}", path.display()))
    }
}

/// CLI flag values that override the config file; `None` leaves the file
/// (or default) value in place.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub asr: Option<String>,
    pub audio_provider: Option<String>,
    pub text_provider: Option<String>,
    pub window: Option<f64>,
    pub architectures: Option<Vec<Architecture>>,
    pub train_settings: Option<Vec<InputSetting>>,
    pub test_settings: Option<Vec<InputSetting>>,
    pub n_seeds: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) {
        if let Some(v) = &self.manifest {
            config.manifest = Some(v.clone());
        }
        if let Some(v) = &self.out {
            config.out = Some(v.clone());
        }
        if let Some(v) = self.seed {
            config.grid.base_seed = v;
        }
        if let Some(v) = self.jobs {
            config.jobs = v;
        }
        if let Some(v) = &self.asr {
            config.asr = v.clone();
        }
        if let Some(v) = &self.audio_provider {
            config.audio_provider = v.clone();
        }
        if let Some(v) = &self.text_provider {
            config.text_provider = v.clone();
        }
        if let Some(v) = self.window {
            config.window = v;
        }
        if let Some(v) = &self.architectures {
            config.grid.architectures = v.clone();
        }
        if let Some(v) = &self.train_settings {
            config.grid.train_settings = v.clone();
        }
        if let Some(v) = &self.test_settings {
            config.grid.test_settings = v.clone();
        }
        if let Some(v) = self.n_seeds {
            config.grid.n_seeds = v;
        }
    }
}

/// Resolve the effective configuration: defaults, then the config file (if
/// any), then flag overrides.
pub fn resolve_config(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut config = match file {
        Some(path) => load_config_file(path)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut config);
    Ok(config)
}
