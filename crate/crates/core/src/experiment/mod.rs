//! Experiment orchestration: grouped leave-one-show-out folds, validation
//! splits, per-job seed derivation, cross-setting evaluation, and the
//! prediction store.
//!
//! A *job* trains one model: (architecture, train setting, fold, seed).
//! Every trained model is then evaluated against all three input settings,
//! so each architecture yields nine train×test configurations.

pub mod pipeline;
pub mod runner;
pub mod train;

pub use crate::preprocess::InputSetting;
pub use pipeline::{materialize_embeddings, PipelineConfig};
pub use runner::{grid_status, run_grid, GridSpec, GridStatus, GridSummary, RunDirs};
pub use train::{train_model, EarlyStopper, EpochStat, TrainConfig, TrainingLog};

use crate::corpus::{Corpus, Label, Sample};
use crate::encoders::{EmbeddingPair, EncoderError, Modality, EMBED_DIM};
use crate::heads::{label_from_logits, Architecture, HeadError, HeadModel};
use crate::preprocess::PreprocessError;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("leave-one-show-out folds need at least two shows, got {got}")]
    TooFewShows { got: usize },
    #[error("train/validation split needs at least four samples, got {got}")]
    TooFewSamples { got: usize },
    #[error("no embeddings for sample {sample_id} under setting {}", .setting.as_str())]
    MissingEmbedding {
        sample_id: String,
        setting: InputSetting,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("job {job} needs base checkpoint {}", .path.display())]
    MissingBaseCheckpoint { job: String, path: PathBuf },
    #[error("bad experiment configuration: {detail}")]
    BadConfig { detail: String },
    #[error("results store mismatch: {detail}")]
    InconsistentStore { detail: String },
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("record parse: {0}")]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

/// One leave-one-show-out fold: every sample of `test_show` is held out,
/// everything else is available for training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test_show: String,
    pub train_shows: Vec<String>,
}

impl Fold {
    /// Train and test samples for this fold, each sorted by sample id.
    pub fn membership<'a>(&self, corpus: &'a Corpus) -> (Vec<&'a Sample>, Vec<&'a Sample>) {
        let mut train: Vec<&Sample> = Vec::new();
        let mut test: Vec<&Sample> = Vec::new();
        for sample in &corpus.samples {
            if sample.show_id == self.test_show {
                test.push(sample);
            } else {
                train.push(sample);
            }
        }
        train.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        test.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        (train, test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    pub fn fold_for_show(&self, show: &str) -> Option<&Fold> {
        self.folds.iter().find(|f| f.test_show == show)
    }
}

/// One fold per show, ordered by show id; each show is tested exactly once.
pub fn plan_folds(corpus: &Corpus) -> Result<FoldPlan, ExperimentError> {
    let shows = corpus.shows();
    if shows.len() < 2 {
        return Err(ExperimentError::TooFewShows { got: shows.len() });
    }
    let folds = shows
        .iter()
        .map(|test| Fold {
            test_show: test.clone(),
            train_shows: shows.iter().filter(|s| *s != test).cloned().collect(),
        })
        .collect();
    Ok(FoldPlan { folds })
}

// ---------------------------------------------------------------------------
// Validation split
// ---------------------------------------------------------------------------

fn val_size(n: usize) -> usize {
    (0.30 * n as f64).round() as usize
}

/// Random 70/30 split of `0..n` into (train, val) index sets, both sorted.
/// |val| = round(0.30·n); deterministic under `seed`.
pub fn split_train_val(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>), ExperimentError> {
    if n < 4 {
        return Err(ExperimentError::TooFewSamples { got: n });
    }
    let k = val_size(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut val: Vec<usize> = order[..k].to_vec();
    let mut train: Vec<usize> = order[k..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Label-stratified variant: the overall validation size is still
/// round(0.30·n), allocated across classes by largest remainder so class
/// proportions carry over as closely as integer counts allow.
pub fn split_train_val_stratified(
    labels: &[Label],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), ExperimentError> {
    let n = labels.len();
    if n < 4 {
        return Err(ExperimentError::TooFewSamples { got: n });
    }
    let k = val_size(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = [Label::Terminal, Label::NonTerminal];
    let groups: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..n).filter(|&i| labels[i] == c).collect())
        .collect();
    // Largest-remainder allocation of k validation slots.
    let exact: Vec<f64> = groups
        .iter()
        .map(|g| k as f64 * g.len() as f64 / n as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|&e| e.floor() as usize).collect();
    let mut left = k - quota.iter().sum::<usize>();
    let mut by_frac: Vec<usize> = (0..groups.len()).collect();
    by_frac.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &g in &by_frac {
        if left == 0 {
            break;
        }
        if quota[g] < groups[g].len() {
            quota[g] += 1;
            left -= 1;
        }
    }
    let mut val = Vec::with_capacity(k);
    let mut train = Vec::with_capacity(n - k);
    for (g, mut idx) in groups.into_iter().enumerate() {
        idx.shuffle(&mut rng);
        val.extend_from_slice(&idx[..quota[g]]);
        train.extend_from_slice(&idx[quota[g]..]);
    }
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

// ---------------------------------------------------------------------------
// Jobs
// ---------------------------------------------------------------------------

/// Identity of one training job. `fold` is the held-out show id; `seed_index`
/// counts the repetitions (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JobId {
    pub architecture: Architecture,
    pub train_setting: InputSetting,
    pub fold: String,
    pub seed_index: u64,
}

impl JobId {
    /// Filename-safe identity string.
    pub fn slug(&self) -> String {
        format!(
            "{}--{}--{}--s{:02}",
            self.architecture,
            self.train_setting.as_str(),
            self.fold,
            self.seed_index
        )
    }

    /// Seed for one purpose ("init", "train", "val-split") within this job,
    /// derived from the base seed and the full job identity so jobs are
    /// independent and order-insensitive.
    pub fn derived_seed(&self, base_seed: u64, purpose: &str) -> u64 {
        crate::util::derive_seed(
            "experiment-job",
            &[
                &base_seed.to_string(),
                purpose,
                self.architecture.as_str(),
                self.train_setting.as_str(),
                &self.fold,
                &self.seed_index.to_string(),
            ],
        )
    }

    /// The sibling job identity that trains `arch` under the same train
    /// setting, fold, and seed — where LF/AF find their base models.
    pub fn sibling(&self, arch: Architecture) -> JobId {
        JobId {
            architecture: arch,
            ..self.clone()
        }
    }
}

impl std::fmt::Display for JobId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.slug())
    }
}

/// Cartesian product architectures × train settings × folds × seeds, in that
/// nesting order.
pub fn enumerate_jobs(
    architectures: &[Architecture],
    train_settings: &[InputSetting],
    plan: &FoldPlan,
    n_seeds: u64,
) -> Vec<JobId> {
    let mut jobs = Vec::new();
    for &arch in architectures {
        for &setting in train_settings {
            for fold in &plan.folds {
                for seed_index in 0..n_seeds {
                    jobs.push(JobId {
                        architecture: arch,
                        train_setting: setting,
                        fold: fold.test_show.clone(),
                        seed_index,
                    });
                }
            }
        }
    }
    jobs
}

// ---------------------------------------------------------------------------
// Embedding table
// ---------------------------------------------------------------------------

/// In-memory embeddings, keyed by input setting then sample id.
#[derive(Debug, Default)]
pub struct EmbeddingTable {
    by_setting: BTreeMap<InputSetting, BTreeMap<String, EmbeddingPair>>,
}

impl EmbeddingTable {
    pub fn new() -> EmbeddingTable {
        EmbeddingTable::default()
    }

    pub fn insert(&mut self, setting: InputSetting, pair: EmbeddingPair) {
        self.by_setting
            .entry(setting)
            .or_default()
            .insert(pair.sample_id.clone(), pair);
    }

    pub fn get(&self, setting: InputSetting, sample_id: &str) -> Option<&EmbeddingPair> {
        self.by_setting.get(&setting)?.get(sample_id)
    }

    pub fn require(
        &self,
        setting: InputSetting,
        sample_id: &str,
    ) -> Result<&EmbeddingPair, ExperimentError> {
        self.get(setting, sample_id)
            .ok_or_else(|| ExperimentError::MissingEmbedding {
                sample_id: sample_id.to_string(),
                setting,
            })
    }

    pub fn n_samples(&self, setting: InputSetting) -> usize {
        self.by_setting.get(&setting).map_or(0, BTreeMap::len)
    }

    pub fn settings(&self) -> Vec<InputSetting> {
        self.by_setting.keys().copied().collect()
    }
}

/// Stack the embedding vectors an architecture needs into batch matrices
/// (audio, text); a modality not required by the architecture stays `None`.
pub(crate) fn stack_required(
    pairs: &[&EmbeddingPair],
    arch: Architecture,
) -> Result<(Option<Array2<f64>>, Option<Array2<f64>>), ExperimentError> {
    let build = |modality: Modality| -> Result<Array2<f64>, ExperimentError> {
        let mut flat = Vec::with_capacity(pairs.len() * EMBED_DIM);
        for pair in pairs {
            let vec = match modality {
                Modality::Audio => pair.audio_vec.as_ref(),
                Modality::Text => pair.text_vec.as_ref(),
            };
            let vec = vec.ok_or(HeadError::MissingModality {
                architecture: arch,
                modality,
            })?;
            flat.extend_from_slice(vec.as_slice());
        }
        Ok(Array2::from_shape_vec((pairs.len(), EMBED_DIM), flat).expect("validated length"))
    };
    let audio = if arch.requires_audio() {
        Some(build(Modality::Audio)?)
    } else {
        None
    };
    let text = if arch.requires_text() {
        Some(build(Modality::Text)?)
    } else {
        None
    };
    Ok((audio, text))
}

// ---------------------------------------------------------------------------
// Prediction records
// ---------------------------------------------------------------------------

/// One evaluated test sample. `correct` is 0/1 so records feed the mixed
/// model directly; `duration` is the annotated segment length in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub show_id: String,
    pub architecture: Architecture,
    pub train_setting: InputSetting,
    pub test_setting: InputSetting,
    pub fold: String,
    pub seed: u64,
    pub predicted_label: Label,
    pub true_label: Label,
    pub correct: u8,
    pub duration: f64,
}

/// Evaluate a trained model on the test-fold samples under one input
/// setting: one record per sample, in sample-id order.
pub fn evaluate_model(
    model: &HeadModel,
    test_samples: &[&Sample],
    table: &EmbeddingTable,
    job: &JobId,
    test_setting: InputSetting,
) -> Result<Vec<PredictionRecord>, ExperimentError> {
    let mut pairs = Vec::with_capacity(test_samples.len());
    for sample in test_samples {
        pairs.push(table.require(test_setting, &sample.sample_id)?);
    }
    let (audio, text) = stack_required(&pairs, model.architecture())?;
    let logits = model.logits_batch(audio.as_ref(), text.as_ref(), None)?;
    let mut records = Vec::with_capacity(test_samples.len());
    for (row, sample) in test_samples.iter().enumerate() {
        let predicted = label_from_logits([logits[[row, 0]], logits[[row, 1]]]);
        records.push(PredictionRecord {
            sample_id: sample.sample_id.clone(),
            show_id: sample.show_id.clone(),
            architecture: job.architecture,
            train_setting: job.train_setting,
            test_setting,
            fold: job.fold.clone(),
            seed: job.seed_index,
            predicted_label: predicted,
            true_label: sample.label,
            correct: u8::from(predicted == sample.label),
            duration: sample.duration(),
        });
    }
    Ok(records)
}

/// Write records as JSON Lines via temp-file rename.
pub fn save_records(path: &Path, records: &[PredictionRecord]) -> Result<(), ExperimentError> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.push(b'\n');
    }
    crate::util::atomic_write(path, &out)?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<PredictionRecord>, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line)?);
    }
    Ok(records)
}

/// Merge every `*.jsonl` file in a records directory, in filename order.
pub fn load_all_records(dir: &Path) -> Result<Vec<PredictionRecord>, ExperimentError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("jsonl"))
        .collect();
    files.sort();
    let mut records = Vec::new();
    for file in files {
        records.extend(load_records(&file)?);
    }
    Ok(records)
}
