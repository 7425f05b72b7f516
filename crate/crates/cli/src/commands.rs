//! Implementations of the standalone subcommands. Each takes parsed
//! arguments, performs one unit of work, writes artifacts, and prints a
//! short human-readable summary to stdout.

use crate::artifacts::{num, write_json, write_jsonl, Meta};
use crate::config::RunConfig;
use crate::errors::{render_chain, Classify, CliError};
use crate::ops::{
    accuracy_table_csv, map_experiment, write_analysis_artifacts, write_posthoc_csv,
    write_report_artifacts, write_stats_artifacts,
};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use trp_core::analysis::{fleiss_kappa, posthoc_contrasts, Grouping, MixedModelFit};
use trp_core::corpus::{
    corpus_stats, generate_synthetic, load_manifest, released_metadata, save_manifest, Corpus,
    CorpusError, SynthConfig,
};
use trp_core::encoders::cache::{EmbeddingCache, EmbeddingMeta};
use trp_core::encoders::{encode_audio, encode_text, resolve_encoder, Modality};
use trp_core::experiment::{
    grid_status, load_all_records, materialize_embeddings, run_grid, ExperimentError,
    InputSetting, PipelineConfig, PredictionRecord, RunDirs,
};
use trp_core::preprocess::{
    load_chunk_index, resolve_asr_client, transcribe, ChunkMode, ChunkSpec, PreprocessError,
    Transcript, TranscriptCache,
};
use trp_core::util::{atomic_write, sha256_hex};

/// Load a manifest, returning the corpus and the directory its relative
/// media paths resolve against.
pub fn load_corpus(manifest: &Path) -> Result<(Corpus, PathBuf), CliError> {
    let corpus = load_manifest(manifest).or_config(format!("manifest {}", manifest.display()))?;
    let dir = manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((corpus, dir))
}

fn map_synth(e: CorpusError) -> CliError {
    match e {
        CorpusError::TooFewShows { .. }
        | CorpusError::TooFewSamples { .. }
        | CorpusError::InvalidFraction { .. } => CliError::Config(render_chain(&e)),
        other => CliError::Job(render_chain(&other)),
    }
}

/// Media problems mean the inputs for this step have not been produced
/// (or pointed at) yet; everything else mid-pipeline is a job failure.
pub(crate) fn map_preprocess(e: PreprocessError) -> CliError {
    match e {
        PreprocessError::MediaUnreadable { .. } | PreprocessError::ManualTranscriptMissing { .. } => {
            CliError::Prerequisite(render_chain(&e))
        }
        other => CliError::Job(render_chain(&other)),
    }
}

fn map_materialize(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::Preprocess(p) => map_preprocess(p),
        other => map_experiment("materializing embeddings", other),
    }
}

/// Load every prediction record under a grid run's records directory.
pub fn load_records_store(dir: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    let records = load_all_records(dir).or_prereq(format!(
        "prediction records under {} (run the experiment first)",
        dir.display()
    ))?;
    if records.is_empty() {
        return Err(CliError::Prerequisite(format!(
            "no prediction records under {} (run the experiment first)",
            dir.display()
        )));
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// corpus
// ---------------------------------------------------------------------------

pub fn corpus_stats_cmd(manifest: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let (corpus, _) = load_corpus(manifest)?;
    let stats = corpus_stats(&corpus).or_config("computing corpus statistics")?;
    print!("{}", crate::ops::render_stats_text(&stats));
    if let Some(dir) = out {
        let meta = Meta::for_params(&serde_json::json!({
            "command": "corpus stats",
            "manifest": manifest.display().to_string(),
        }));
        write_stats_artifacts(&stats, dir, &meta)?;
        println!("\nwrote label_buckets.csv and shows.csv to {}", dir.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn corpus_synth_cmd(
    n: usize,
    shows: usize,
    cue: f64,
    terminal_frac: f64,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let config = SynthConfig {
        n_samples: n,
        n_shows: shows,
        cue_strength: cue,
        terminal_fraction: terminal_frac,
        seed,
    };
    let corpus = generate_synthetic(&config, out).map_err(map_synth)?;
    println!(
        "generated {} samples across {} shows (cue strength {cue}, seed {seed})",
        corpus.len(),
        shows
    );
    println!("manifest: {}", out.join("manifest.jsonl").display());
    Ok(())
}

pub fn corpus_released_cmd(out: &Path) -> Result<(), CliError> {
    let corpus = released_metadata();
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).or_job(format!("creating {}", parent.display()))?;
    }
    save_manifest(&corpus, out).or_job(format!("writing {}", out.display()))?;
    println!(
        "wrote the released annotation metadata ({} samples, {} shows) to {}",
        corpus.len(),
        corpus.shows().len(),
        out.display()
    );
    println!("note: media paths are placeholders; the manifest supports statistics and planning, not training");
    Ok(())
}

// ---------------------------------------------------------------------------
// prep
// ---------------------------------------------------------------------------

pub fn prep_chunks_cmd(
    manifest: &Path,
    mode: ChunkMode,
    window: f64,
    out: &Path,
) -> Result<(), CliError> {
    if !(window.is_finite() && window > 0.0) {
        return Err(CliError::Config(format!(
            "window must be a positive number of seconds, got {window}"
        )));
    }
    let (corpus, manifest_dir) = load_corpus(manifest)?;
    let spec = match mode {
        ChunkMode::Ref => ChunkSpec::reference(),
        ChunkMode::Fixed => ChunkSpec::fixed(window),
    };
    let chunks =
        trp_core::preprocess::extract_chunks(&corpus, &spec, &manifest_dir, out).map_err(map_preprocess)?;
    let meta = Meta::for_params(&serde_json::json!({
        "command": "prep chunks",
        "manifest": manifest.display().to_string(),
        "mode": spec.tag(),
    }));
    write_json(
        &out.join("chunks.meta.json"),
        &meta,
        "store",
        &serde_json::json!({ "chunks": chunks.len(), "mode": spec.tag() }),
    )?;
    println!(
        "extracted {} chunks ({}) to {}",
        chunks.len(),
        spec.tag(),
        out.display()
    );
    println!("index: {}", out.join("chunks.jsonl").display());
    Ok(())
}

pub fn prep_transcribe_cmd(
    chunks: &Path,
    asr: &str,
    cache: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let index_path = if chunks.is_dir() {
        chunks.join("chunks.jsonl")
    } else {
        chunks.to_path_buf()
    };
    let chunks_dir = index_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let index = load_chunk_index(&index_path).or_prereq(format!(
        "chunk index {} (run `prep chunks` first)",
        index_path.display()
    ))?;
    let client = resolve_asr_client(asr).or_config(format!("ASR client `{asr}`"))?;
    let cache_dir = cache
        .map(Path::to_path_buf)
        .unwrap_or_else(|| chunks_dir.join("transcripts"));
    let cache = TranscriptCache::new(&cache_dir)
        .or_job(format!("opening transcript cache {}", cache_dir.display()))?;

    let transcripts: Result<Vec<Transcript>, CliError> = index
        .par_iter()
        .map(|chunk| transcribe(chunk, &*client, &cache).map_err(map_preprocess))
        .collect();
    let transcripts = transcripts?;

    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| chunks_dir.join("transcripts.jsonl"));
    let meta = Meta::for_params(&serde_json::json!({
        "command": "prep transcribe",
        "chunks": index_path.display().to_string(),
        "asr": client.identity(),
    }));
    write_jsonl(&out_path, &meta, &transcripts)?;
    println!(
        "transcribed {} chunks with `{}` (cache: {})",
        transcripts.len(),
        client.identity(),
        cache_dir.display()
    );
    println!("transcripts: {}", out_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// encode
// ---------------------------------------------------------------------------

pub fn encode_cmd(
    modality: Modality,
    provider_name: &str,
    in_dir: &Path,
    cache_dir: &Path,
) -> Result<(), CliError> {
    let provider = resolve_encoder(provider_name, modality)
        .or_config(format!("{modality} encoder `{provider_name}`"))?;
    let cache = EmbeddingCache::new(cache_dir)
        .or_job(format!("opening embedding cache {}", cache_dir.display()))?;

    let n = match modality {
        Modality::Audio => {
            let index_path = in_dir.join("chunks.jsonl");
            let chunks = load_chunk_index(&index_path).or_prereq(format!(
                "chunk index {} (run `prep chunks` first)",
                index_path.display()
            ))?;
            let results: Result<Vec<()>, CliError> = chunks
                .par_iter()
                .map(|chunk| {
                    let bytes = std::fs::read(&chunk.waveform_ref).or_prereq(format!(
                        "chunk artifact {} (run `prep chunks` first)",
                        chunk.waveform_ref.display()
                    ))?;
                    let input_hash = sha256_hex(&[&bytes]);
                    let meta = EmbeddingMeta {
                        key: EmbeddingCache::key(&provider.name(), &input_hash),
                        provider: provider.name(),
                        modality,
                        sample_id: chunk.sample_id.clone(),
                        input_hash,
                    };
                    cache
                        .get_or_compute(&meta, || encode_audio(chunk, &*provider))
                        .or_job(format!("encoding chunk for sample {}", chunk.sample_id))?;
                    Ok(())
                })
                .collect();
            results?.len()
        }
        Modality::Text => {
            let index_path = in_dir.join("transcripts.jsonl");
            let content = std::fs::read_to_string(&index_path).or_prereq(format!(
                "transcript store {} (run `prep transcribe` first)",
                index_path.display()
            ))?;
            let transcripts: Result<Vec<Transcript>, CliError> = content
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|line| {
                    serde_json::from_str(line)
                        .or_job(format!("parsing transcript record in {}", index_path.display()))
                })
                .collect();
            let transcripts = transcripts?;
            let results: Result<Vec<()>, CliError> = transcripts
                .par_iter()
                .map(|t| {
                    let input_hash = sha256_hex(&[t.text.as_bytes()]);
                    let meta = EmbeddingMeta {
                        key: EmbeddingCache::key(&provider.name(), &input_hash),
                        provider: provider.name(),
                        modality,
                        sample_id: t.sample_id.clone(),
                        input_hash,
                    };
                    cache
                        .get_or_compute(&meta, || encode_text(t, &*provider))
                        .or_job(format!("encoding transcript for sample {}", t.sample_id))?;
                    Ok(())
                })
                .collect();
            results?.len()
        }
    };

    let entries = cache.entries().or_job("listing the embedding cache")?;
    let meta = Meta::for_params(&serde_json::json!({
        "command": "encode",
        "modality": modality.to_string(),
        "provider": provider.name(),
    }));
    write_jsonl(&cache_dir.join("index.jsonl"), &meta, &entries)?;
    println!(
        "encoded {n} {modality} inputs with `{}`; cache now holds {} embeddings",
        provider.name(),
        entries.len()
    );
    println!("index: {}", cache_dir.join("index.jsonl").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// exp
// ---------------------------------------------------------------------------

/// Train and test settings combined, deduplicated in name order.
pub fn union_settings(config: &RunConfig) -> Vec<InputSetting> {
    let mut settings: Vec<InputSetting> = config
        .grid
        .train_settings
        .iter()
        .chain(&config.grid.test_settings)
        .copied()
        .collect();
    settings.sort_by_key(|s| s.as_str());
    settings.dedup();
    settings
}

/// Materialize embeddings for every setting a grid touches, using the
/// caches under `<out>/work`.
pub fn materialize_for_config(
    config: &RunConfig,
    corpus: &Corpus,
    manifest_dir: &Path,
) -> Result<trp_core::experiment::EmbeddingTable, CliError> {
    let out = config.out_path()?;
    let asr = resolve_asr_client(&config.asr).or_config(format!("ASR client `{}`", config.asr))?;
    let audio = resolve_encoder(&config.audio_provider, Modality::Audio)
        .or_config(format!("audio encoder `{}`", config.audio_provider))?;
    let text = resolve_encoder(&config.text_provider, Modality::Text)
        .or_config(format!("text encoder `{}`", config.text_provider))?;
    let settings = union_settings(config);
    materialize_embeddings(
        corpus,
        &PipelineConfig {
            manifest_dir,
            work_dir: &out.join("work"),
            window: config.window,
            asr: &*asr,
            audio_encoder: &*audio,
            text_encoder: &*text,
            settings: &settings,
        },
    )
    .map_err(map_materialize)
}

pub fn exp_run_cmd(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let manifest = config.manifest_path()?.to_path_buf();
    let out = config.out_path()?.to_path_buf();
    std::fs::create_dir_all(&out).or_job(format!("creating {}", out.display()))?;
    let meta = Meta::new(config.hash());
    write_json(&out.join("config.json"), &meta, "config", config)?;

    let (corpus, manifest_dir) = load_corpus(&manifest)?;
    println!(
        "materializing embeddings for {} samples × {} settings…",
        corpus.len(),
        union_settings(config).len()
    );
    let table = materialize_for_config(config, &corpus, &manifest_dir)?;

    let dirs = RunDirs::new(&out.join("run"));
    let jobs = config.grid.architectures.len()
        * config.grid.train_settings.len()
        * corpus.shows().len()
        * config.grid.n_seeds as usize;
    println!("running the grid: {jobs} training jobs…");
    let summary = run_grid(&corpus, &table, &config.grid, &dirs)
        .map_err(|e| map_experiment("running the grid", e))?;
    write_json(&dirs.root.join("summary.json"), &meta, "summary", &summary)?;
    println!(
        "grid complete: {} jobs ({} ran, {} resumed from disk), {} prediction records",
        summary.total_jobs, summary.ran, summary.skipped, summary.records
    );
    println!("records: {}", dirs.records().display());
    Ok(())
}

pub fn exp_status_cmd(config: &RunConfig) -> Result<(), CliError> {
    let manifest = config.manifest_path()?.to_path_buf();
    let out = config.out_path()?.to_path_buf();
    let (corpus, _) = load_corpus(&manifest)?;
    let dirs = RunDirs::new(&out.join("run"));
    let status = grid_status(&corpus, &config.grid, &dirs)
        .map_err(|e| map_experiment("checking grid status", e))?;
    println!(
        "{}/{} jobs complete, {} remaining",
        status.done,
        status.total,
        status.remaining.len()
    );
    for job in status.remaining.iter().take(10) {
        println!("  pending: {}", job.slug());
    }
    if status.remaining.len() > 10 {
        println!("  … and {} more", status.remaining.len() - 10);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

pub fn analyze_tables_cmd(records: &Path, by: &str, out: Option<&Path>) -> Result<(), CliError> {
    let grouping = match by {
        "show" => Grouping::Show,
        "duration" => Grouping::DurationBucket,
        "overall" => Grouping::Overall,
        other => {
            return Err(CliError::Config(format!(
                "unknown grouping `{other}` (expected show, duration, or overall)"
            )))
        }
    };
    let store = load_records_store(records)?;
    let table = trp_core::analysis::aggregate_accuracy(&store, grouping)
        .or_job("aggregating accuracy")?;
    let meta = Meta::for_params(&serde_json::json!({
        "command": "analyze tables",
        "records": records.display().to_string(),
        "by": by,
    }));
    let doc = accuracy_table_csv(&table, &meta);
    print!("{doc}");
    if let Some(path) = out {
        atomic_write(path, doc.as_bytes()).or_job(format!("writing {}", path.display()))?;
        println!("# wrote {}", path.display());
    }
    Ok(())
}

pub fn analyze_lmm_cmd(records: &Path, out: &Path) -> Result<(), CliError> {
    let store = load_records_store(records)?;
    let meta = Meta::for_params(&serde_json::json!({
        "command": "analyze lmm",
        "records": records.display().to_string(),
    }));
    let fit = trp_core::analysis::fit_lmm(&store, &Default::default())
        .or_job("fitting the mixed model")?;
    write_json(out, &meta, "fit", &fit)?;
    print_fit_summary(&fit);
    println!("fit: {}", out.display());
    Ok(())
}

fn print_fit_summary(fit: &MixedModelFit) {
    println!(
        "mixed model over {} records ({} samples, {} shows): {} fixed effects",
        fit.n_records,
        fit.n_samples,
        fit.n_shows,
        fit.beta.len()
    );
    println!(
        "variance components: residual {} | sample {} | show {}",
        num(fit.sigma2_residual),
        num(fit.sigma2_sample),
        num(fit.sigma2_show)
    );
    let conv = &fit.convergence;
    println!(
        "convergence: {} after {} sweeps{}",
        if conv.converged { "yes" } else { "NO" },
        conv.sweeps,
        if conv.boundary.is_empty() {
            String::new()
        } else {
            format!(" (boundary: {})", conv.boundary.join(", "))
        }
    );
}

pub fn analyze_posthoc_cmd(
    fit_path: &Path,
    test: Option<&str>,
    train: Option<&str>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let fit = crate::ops::read_fit(fit_path)?;
    let parse = |flag: &str, value: Option<&str>, default: InputSetting| -> Result<InputSetting, CliError> {
        match value {
            None => Ok(default),
            Some(s) => s
                .parse::<InputSetting>()
                .or_config(format!("--{flag} value `{s}`")),
        }
    };
    let test = parse("test", test, fit.coding.tests[0])?;
    let train = parse("train", train, fit.coding.trains[0])?;
    let contrasts = posthoc_contrasts(&fit, test, train)
        .or_config("post-hoc contrasts over the fitted model")?;

    println!(
        "pairwise architecture contrasts at test {} / train {} ({} comparisons, Bonferroni-adjusted):",
        test.as_str(),
        train.as_str(),
        contrasts.len()
    );
    println!(
        "{:<6}{:<6}{:>12}{:>12}{:>9}{:>12}{:>12}",
        "a", "b", "estimate", "std_error", "z", "p_raw", "p_adjusted"
    );
    for c in &contrasts {
        println!(
            "{:<6}{:<6}{:>12.6}{:>12.6}{:>9.3}{:>12.6}{:>12.6}",
            c.pair.0.as_str(),
            c.pair.1.as_str(),
            c.estimate,
            c.std_error,
            c.z,
            c.p_raw,
            c.p_adjusted
        );
    }
    if let Some(path) = out {
        let meta = Meta::for_params(&serde_json::json!({
            "command": "analyze posthoc",
            "fit": fit_path.display().to_string(),
            "test": test.as_str(),
            "train": train.as_str(),
        }));
        write_posthoc_csv(path, &meta, &contrasts, test, train)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn analyze_kappa_cmd(ratings: &Path) -> Result<(), CliError> {
    let content = std::fs::read_to_string(ratings)
        .or_prereq(format!("ratings table {}", ratings.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(content.as_bytes());
    let mut table: Vec<Vec<usize>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.or_config(format!("reading {} row {}", ratings.display(), i + 1))?;
        let row: Result<Vec<usize>, CliError> = record
            .iter()
            .map(|cell| {
                cell.trim().parse::<usize>().or_config(format!(
                    "{} row {}: expected per-category rating counts, got `{cell}`",
                    ratings.display(),
                    i + 1
                ))
            })
            .collect();
        table.push(row?);
    }
    let kappa = fleiss_kappa(&table).or_config("computing inter-rater agreement")?;
    println!(
        "Fleiss' kappa over {} items × {} categories: {:.6}",
        table.len(),
        table.first().map_or(0, Vec::len),
        kappa
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze (full bundle) + report
// ---------------------------------------------------------------------------

pub fn analyze_all_cmd(records: &Path, out: &Path) -> Result<(), CliError> {
    let store = load_records_store(records)?;
    let meta = Meta::for_params(&serde_json::json!({
        "command": "analyze",
        "records": records.display().to_string(),
    }));
    let fit = write_analysis_artifacts(&store, out, &meta)?;
    print_fit_summary(&fit);
    println!("analysis artifacts: {}", out.display());
    Ok(())
}

pub fn report_cmd(analysis: &Path, out: &Path) -> Result<(), CliError> {
    let meta = Meta::for_params(&serde_json::json!({
        "command": "report",
        "analysis": analysis.display().to_string(),
    }));
    write_report_artifacts(analysis, out, &meta)?;
    println!(
        "report bundle (effects + duration plots as SVG/CSV pairs, per-show table): {}",
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_settings_merges_and_sorts_by_name() {
        let mut config = RunConfig::default();
        config.grid.train_settings = vec![InputSetting::RefMan];
        config.grid.test_settings = vec![InputSetting::ThreeSAuto, InputSetting::RefMan];
        assert_eq!(
            union_settings(&config),
            vec![InputSetting::ThreeSAuto, InputSetting::RefMan]
        );
    }

    #[test]
    fn synthetic_corpus_validation_maps_to_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = corpus_synth_cmd(5, 10, 1.0, 0.43, 7, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
        let err = corpus_synth_cmd(50, 10, 1.5, 0.43, 7, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    #[test]
    fn kappa_command_rejects_non_numeric_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ratings.csv");
        std::fs::write(&path, "# rater counts per category\n3,x\n").unwrap();
        let err = analyze_kappa_cmd(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    #[test]
    fn missing_records_directory_is_a_prerequisite_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_records_store(&dir.path().join("absent")).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
    }
}
