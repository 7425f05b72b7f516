//! The staged pipeline: one `run` invocation executes an ordered subset of
//! the eight stages against a single configuration and output tree.
//! Completed stages leave a sentinel recording the configuration hash, so
//! re-running is a no-op and artifacts are never rebuilt under the same
//! configuration.

use crate::artifacts::{write_json, Meta};
use crate::commands::{load_corpus, materialize_for_config, union_settings};
use crate::config::RunConfig;
use crate::errors::{Classify, CliError};
use crate::ops::{
    map_experiment, write_analysis_artifacts, write_report_artifacts, write_stats_artifacts,
};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use trp_core::corpus::{corpus_stats, Corpus};
use trp_core::experiment::{grid_status, load_all_records, run_grid, InputSetting, RunDirs};
use trp_core::preprocess::{
    extract_chunks, resolve_asr_client, ChunkSpec, TranscriptCache, TranscriptResolver,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Stats,
    Chunk,
    Transcribe,
    Encode,
    Train,
    Evaluate,
    Analyze,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Stats,
        Stage::Chunk,
        Stage::Transcribe,
        Stage::Encode,
        Stage::Train,
        Stage::Evaluate,
        Stage::Analyze,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Stats => "stats",
            Stage::Chunk => "chunk",
            Stage::Transcribe => "transcribe",
            Stage::Encode => "encode",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }

    /// The stage whose outputs this stage consumes. `stats` and `chunk`
    /// start from the manifest alone.
    pub fn prerequisite(self) -> Option<Stage> {
        match self {
            Stage::Stats | Stage::Chunk => None,
            Stage::Transcribe => Some(Stage::Chunk),
            Stage::Encode => Some(Stage::Transcribe),
            Stage::Train => Some(Stage::Encode),
            Stage::Evaluate => Some(Stage::Train),
            Stage::Analyze => Some(Stage::Evaluate),
            Stage::Report => Some(Stage::Analyze),
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Stage, CliError> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                CliError::Config(format!(
                    "unknown stage `{s}` (expected one of: {})",
                    names.join(", ")
                ))
            })
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn sentinel_path(out: &Path, stage: Stage) -> PathBuf {
    out.join("status").join(format!("{}.json", stage.name()))
}

/// Whether `stage` already completed under exactly this configuration.
fn sentinel_matches(out: &Path, stage: Stage, config_hash: &str) -> bool {
    let Ok(bytes) = std::fs::read(sentinel_path(out, stage)) else {
        return false;
    };
    let Ok(doc) = serde_json::from_slice::<serde_json::Value>(&bytes) else {
        return false;
    };
    doc.get("config_hash").and_then(|v| v.as_str()) == Some(config_hash)
}

fn write_sentinel(out: &Path, stage: Stage, meta: &Meta) -> Result<(), CliError> {
    std::fs::create_dir_all(out.join("status"))
        .or_job(format!("creating {}", out.join("status").display()))?;
    write_json(&sentinel_path(out, stage), meta, "stage", &stage.name())
}

/// Execute the requested stages in pipeline order. Stages whose sentinel
/// already matches the configuration are skipped; a stage whose
/// prerequisite has neither run under this configuration nor been
/// requested earlier in the same invocation is a prerequisite error.
pub fn run_pipeline(config: &RunConfig, requested: &[Stage]) -> Result<(), CliError> {
    config.validate()?;
    let out = config.out_path()?.to_path_buf();
    std::fs::create_dir_all(&out).or_job(format!("creating {}", out.display()))?;
    let hash = config.hash();
    let meta = Meta::new(hash.clone());
    write_json(&out.join("config.json"), &meta, "config", config)?;

    let mut ordered: Vec<Stage> = requested.to_vec();
    ordered.sort();
    ordered.dedup();

    let mut satisfied: BTreeSet<Stage> = Stage::ALL
        .into_iter()
        .filter(|&s| sentinel_matches(&out, s, &hash))
        .collect();

    for &stage in &ordered {
        if let Some(pre) = stage.prerequisite() {
            if !satisfied.contains(&pre) {
                return Err(CliError::Prerequisite(format!(
                    "stage `{stage}` needs stage `{pre}` to have run under this configuration first"
                )));
            }
        }
        if satisfied.contains(&stage) {
            println!("stage {stage}: up to date, skipping");
            continue;
        }
        println!("stage {stage}: running");
        run_stage(config, stage, &out, &meta)?;
        write_sentinel(&out, stage, &meta)?;
        satisfied.insert(stage);
    }
    Ok(())
}

fn run_stage(config: &RunConfig, stage: Stage, out: &Path, meta: &Meta) -> Result<(), CliError> {
    let manifest = config.manifest_path()?.to_path_buf();
    let (corpus, manifest_dir) = load_corpus(&manifest)?;
    match stage {
        Stage::Stats => stage_stats(&corpus, out, meta),
        Stage::Chunk => stage_chunk(config, &corpus, &manifest_dir, out),
        Stage::Transcribe => stage_transcribe(config, &corpus, &manifest_dir, out),
        Stage::Encode => {
            materialize_for_config(config, &corpus, &manifest_dir)?;
            println!("  embeddings cached under {}", out.join("work").display());
            Ok(())
        }
        Stage::Train => stage_train(config, &corpus, &manifest_dir, out, meta),
        Stage::Evaluate => stage_evaluate(config, &corpus, out, meta),
        Stage::Analyze => {
            let records = crate::commands::load_records_store(&RunDirs::new(&out.join("run")).records())?;
            write_analysis_artifacts(&records, &out.join("analysis"), meta)?;
            println!("  analysis artifacts under {}", out.join("analysis").display());
            Ok(())
        }
        Stage::Report => {
            write_report_artifacts(&out.join("analysis"), &out.join("report"), meta)?;
            println!("  report bundle under {}", out.join("report").display());
            Ok(())
        }
    }
}

fn stage_stats(corpus: &Corpus, out: &Path, meta: &Meta) -> Result<(), CliError> {
    let stats = corpus_stats(corpus).or_config("computing corpus statistics")?;
    print!("{}", crate::ops::render_stats_text(&stats));
    write_stats_artifacts(&stats, &out.join("stats"), meta)?;
    println!("  statistics tables under {}", out.join("stats").display());
    Ok(())
}

/// Extract every chunk layout the configured settings need, in the same
/// cache layout the embedding pipeline reads (`work/chunks/<tag>/`).
fn stage_chunk(
    config: &RunConfig,
    corpus: &Corpus,
    manifest_dir: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let mut specs: Vec<ChunkSpec> = union_settings(config)
        .into_iter()
        .map(|s| s.chunk_spec(config.window))
        .collect();
    specs.sort_by_key(ChunkSpec::tag);
    specs.dedup_by_key(|s| s.tag());
    for spec in &specs {
        let dir = out.join("work").join("chunks").join(spec.tag());
        let chunks = extract_chunks(corpus, spec, manifest_dir, &dir)
            .map_err(crate::commands::map_preprocess)?;
        println!("  {}: {} chunks", spec.tag(), chunks.len());
    }
    Ok(())
}

/// Resolve a transcript for every (sample, setting) pair, populating the
/// shared transcript cache the embedding pipeline reads.
fn stage_transcribe(
    config: &RunConfig,
    corpus: &Corpus,
    manifest_dir: &Path,
    out: &Path,
) -> Result<(), CliError> {
    use rayon::prelude::*;
    let client =
        resolve_asr_client(&config.asr).or_config(format!("ASR client `{}`", config.asr))?;
    let cache = TranscriptCache::new(&out.join("work").join("transcripts"))
        .or_job("opening the transcript cache")?;
    let settings: Vec<InputSetting> = union_settings(config);
    for setting in settings {
        let chunk_dir = out
            .join("work")
            .join("chunks")
            .join(setting.chunk_spec(config.window).tag());
        let resolver = TranscriptResolver {
            manifest_dir,
            chunk_dir: &chunk_dir,
            window: config.window,
            client: &*client,
            cache: &cache,
        };
        let done: Result<Vec<()>, CliError> = corpus
            .samples
            .par_iter()
            .map(|sample| {
                resolver
                    .resolve_transcript(sample, setting)
                    .map(|_| ())
                    .map_err(crate::commands::map_preprocess)
            })
            .collect();
        println!("  {}: {} transcripts", setting.as_str(), done?.len());
    }
    Ok(())
}

fn stage_train(
    config: &RunConfig,
    corpus: &Corpus,
    manifest_dir: &Path,
    out: &Path,
    meta: &Meta,
) -> Result<(), CliError> {
    let table = materialize_for_config(config, corpus, manifest_dir)?;
    let dirs = RunDirs::new(&out.join("run"));
    let summary = run_grid(corpus, &table, &config.grid, &dirs)
        .map_err(|e| map_experiment("running the grid", e))?;
    write_json(&dirs.root.join("summary.json"), meta, "summary", &summary)?;
    println!(
        "  {} jobs ({} ran, {} resumed), {} prediction records",
        summary.total_jobs, summary.ran, summary.skipped, summary.records
    );
    Ok(())
}

/// Confirm every job of the grid has its records on disk and write the
/// evaluation roll-up (record counts per architecture × train × test).
fn stage_evaluate(
    config: &RunConfig,
    corpus: &Corpus,
    out: &Path,
    meta: &Meta,
) -> Result<(), CliError> {
    let dirs = RunDirs::new(&out.join("run"));
    let status = grid_status(corpus, &config.grid, &dirs)
        .map_err(|e| map_experiment("checking grid status", e))?;
    if !status.remaining.is_empty() {
        return Err(CliError::Prerequisite(format!(
            "{} of {} grid jobs have no records yet; run the train stage to completion",
            status.remaining.len(),
            status.total
        )));
    }
    let records = load_all_records(&dirs.records())
        .or_prereq(format!("prediction records under {}", dirs.records().display()))?;
    let mut counts: std::collections::BTreeMap<(String, String, String), usize> =
        std::collections::BTreeMap::new();
    for r in &records {
        *counts
            .entry((
                r.architecture.as_str().to_string(),
                r.train_setting.as_str().to_string(),
                r.test_setting.as_str().to_string(),
            ))
            .or_default() += 1;
    }
    let cells: Vec<serde_json::Value> = counts
        .into_iter()
        .map(|((arch, train, test), n)| {
            serde_json::json!({
                "architecture": arch, "train": train, "test": test, "records": n,
            })
        })
        .collect();
    write_json(
        &dirs.root.join("evaluation.json"),
        meta,
        "evaluation",
        &serde_json::json!({
            "jobs": status.total,
            "records": records.len(),
            "cells": cells,
        }),
    )?;
    println!(
        "  {} records across {} evaluation cells",
        records.len(),
        cells.len()
    );
    Ok(())
}
