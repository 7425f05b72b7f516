//! `trp` — turn-terminality experiment toolkit.
//!
//! Subcommands cover each pipeline step standalone (corpus, prep, encode,
//! exp, analyze, report) plus `run`, which executes the staged pipeline
//! against one configuration and output tree.

mod artifacts;
mod commands;
mod config;
mod errors;
mod ops;
mod plots;
mod stages;

use clap::{Args, Parser, Subcommand};
use config::{resolve_config, Overrides};
use errors::{Classify, CliError};
use stages::Stage;
use std::path::PathBuf;
use trp_core::encoders::Modality;
use trp_core::experiment::InputSetting;
use trp_core::heads::Architecture;
use trp_core::preprocess::ChunkMode;

#[derive(Parser)]
#[command(
    name = "trp",
    version,
    about = "Turn-terminality classification experiments: corpus tools, preprocessing, \
             encoder caches, the training grid, statistics, and reports"
)]
struct Cli {
    /// Worker threads for parallel sections (0 = one per CPU core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus manifests: statistics, synthetic generation, released metadata.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Model-input preparation: audio chunks and transcripts.
    #[command(subcommand)]
    Prep(PrepCmd),
    /// Fill an embedding cache from chunks or transcripts.
    Encode(EncodeArgs),
    /// The training grid: run it or inspect its progress.
    #[command(subcommand)]
    Exp(ExpCmd),
    /// Statistics over prediction records.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Emit the report bundle (plots and tables) from an analysis directory.
    Report(ReportArgs),
    /// Run the staged pipeline under one configuration.
    Run(RunArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Print label/duration/show statistics for a manifest.
    Stats {
        /// Corpus manifest (JSON Lines).
        manifest: PathBuf,
        /// Also write the statistics tables as CSV into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with controllable cue strength.
    Synth {
        /// Number of samples.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Number of shows (grouping units for cross-validation).
        #[arg(long, default_value_t = 10)]
        shows: usize,
        /// Cue strength in [0, 1]: how recoverable the label is.
        #[arg(long, default_value_t = 1.0)]
        cue: f64,
        /// Fraction of samples labeled Terminal, in (0, 1).
        #[arg(long, default_value_t = 0.43)]
        terminal_frac: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output directory (manifest.jsonl plus media/).
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the released corpus' annotation metadata as a manifest.
    Released {
        /// Output manifest path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PrepCmd {
    /// Cut per-sample audio chunks and write an index.
    Chunks {
        /// Corpus manifest (JSON Lines).
        manifest: PathBuf,
        /// Chunking regime: the annotated segment, or a fixed window
        /// ending at the speaker change.
        #[arg(long, default_value = "ref")]
        mode: String,
        /// Window length in seconds for the fixed mode.
        #[arg(long, default_value_t = 3.0)]
        window: f64,
        /// Output directory for chunk artifacts and chunks.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Transcribe a chunk index through a persistent cache.
    Transcribe {
        /// Chunk directory (or a chunks.jsonl path).
        chunks: PathBuf,
        /// ASR engine: stub, replay:<dir>, command:<program [args]>, http
        /// (endpoint from TRP_ASR_ENDPOINT), or an http(s) URL.
        #[arg(long, default_value = "stub")]
        asr: String,
        /// Transcript cache directory (default: <chunks>/transcripts).
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Output transcript store (default: <chunks>/transcripts.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EncodeArgs {
    /// Input modality: audio (reads chunks.jsonl) or text (reads
    /// transcripts.jsonl).
    #[arg(long)]
    modality: String,
    /// Encoder: stub, or command:<program [args]>.
    #[arg(long, default_value = "stub")]
    provider: String,
    /// Directory holding the chunk index or transcript store.
    #[arg(long = "in")]
    in_dir: PathBuf,
    /// Embedding cache directory.
    #[arg(long)]
    cache: PathBuf,
}

#[derive(Subcommand)]
enum ExpCmd {
    /// Train and evaluate the full grid (resumable).
    Run(ExpRunArgs),
    /// Report which grid jobs are done and which remain.
    Status(ExpRunArgs),
}

#[derive(Args)]
struct ExpRunArgs {
    /// Configuration file (TOML or JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output tree (work caches, checkpoints, records).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Architectures to train (comma-separated).
    #[arg(long, value_delimiter = ',')]
    archs: Option<Vec<String>>,
    /// Input settings to train under (comma-separated).
    #[arg(long, value_delimiter = ',')]
    train_settings: Option<Vec<String>>,
    /// Input settings to evaluate under (comma-separated).
    #[arg(long, value_delimiter = ',')]
    test_settings: Option<Vec<String>>,
    /// Training repetitions per (architecture, train setting, fold).
    #[arg(long)]
    seeds: Option<u64>,
    /// Root seed all per-job seeds derive from.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    asr: Option<String>,
    #[arg(long)]
    audio_provider: Option<String>,
    #[arg(long)]
    text_provider: Option<String>,
    /// Fixed-window length in seconds.
    #[arg(long)]
    window: Option<f64>,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Accuracy tables from prediction records.
    Tables {
        /// Records directory of a grid run.
        #[arg(long)]
        records: PathBuf,
        /// Grouping: show, duration, or overall.
        #[arg(long, default_value = "overall")]
        by: String,
        /// Also write the table to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the mixed model (correctness ~ architecture × settings, random
    /// intercepts for shows and samples within shows).
    Lmm {
        #[arg(long)]
        records: PathBuf,
        /// Output JSON file for the fit.
        #[arg(long, default_value = "fit.json")]
        out: PathBuf,
    },
    /// Bonferroni-adjusted pairwise architecture contrasts from a fit.
    Posthoc {
        /// Fit JSON produced by `analyze lmm`.
        #[arg(long)]
        fit: PathBuf,
        /// Test setting of the contrast cell (default: the fit's reference).
        #[arg(long)]
        test: Option<String>,
        /// Train setting of the contrast cell (default: the fit's reference).
        #[arg(long)]
        train: Option<String>,
        /// Also write the contrasts to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fleiss' kappa over a ratings table (rows = items, columns =
    /// per-category rating counts; `#` starts a comment line).
    Kappa {
        #[arg(long)]
        ratings: PathBuf,
    },
    /// Run every analysis and write the full artifact bundle.
    All {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// Analysis directory produced by `analyze all` or the analyze stage.
    #[arg(long)]
    analysis: PathBuf,
    /// Output directory for the report bundle.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (TOML or JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stages to run, in pipeline order (default: all).
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<String>>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed all per-job seeds derive from.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    archs: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    train_settings: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    test_settings: Option<Vec<String>>,
    /// Training repetitions per (architecture, train setting, fold).
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    asr: Option<String>,
    #[arg(long)]
    audio_provider: Option<String>,
    #[arg(long)]
    text_provider: Option<String>,
    #[arg(long)]
    window: Option<f64>,
}

fn parse_archs(names: &Option<Vec<String>>) -> Result<Option<Vec<Architecture>>, CliError> {
    names
        .as_ref()
        .map(|list| {
            list.iter()
                .map(|s| {
                    s.parse::<Architecture>()
                        .map_err(|e| CliError::Config(format!("architecture `{s}`: {e}")))
                })
                .collect()
        })
        .transpose()
}

fn parse_settings(names: &Option<Vec<String>>) -> Result<Option<Vec<InputSetting>>, CliError> {
    names
        .as_ref()
        .map(|list| {
            list.iter()
                .map(|s| s.parse::<InputSetting>().or_config(format!("input setting `{s}`")))
                .collect()
        })
        .transpose()
}

fn exp_overrides(args: &ExpRunArgs, jobs: usize) -> Result<Overrides, CliError> {
    Ok(Overrides {
        manifest: args.manifest.clone(),
        out: args.out.clone(),
        seed: args.seed,
        jobs: (jobs > 0).then_some(jobs),
        asr: args.asr.clone(),
        audio_provider: args.audio_provider.clone(),
        text_provider: args.text_provider.clone(),
        window: args.window,
        architectures: parse_archs(&args.archs)?,
        train_settings: parse_settings(&args.train_settings)?,
        test_settings: parse_settings(&args.test_settings)?,
        n_seeds: args.seeds,
    })
}

fn run_overrides(args: &RunArgs, jobs: usize) -> Result<Overrides, CliError> {
    Ok(Overrides {
        manifest: args.manifest.clone(),
        out: args.out.clone(),
        seed: args.seed,
        jobs: (jobs > 0).then_some(jobs),
        asr: args.asr.clone(),
        audio_provider: args.audio_provider.clone(),
        text_provider: args.text_provider.clone(),
        window: args.window,
        architectures: parse_archs(&args.archs)?,
        train_settings: parse_settings(&args.train_settings)?,
        test_settings: parse_settings(&args.test_settings)?,
        n_seeds: args.seeds,
    })
}

/// Cap rayon's worker count. May only take effect once per process; later
/// calls with a different value are ignored, which is fine for a CLI that
/// configures the pool up front.
fn configure_jobs(jobs: usize) {
    if jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    configure_jobs(cli.jobs);
    match cli.command {
        Command::Corpus(cmd) => match cmd {
            CorpusCmd::Stats { manifest, out } => {
                commands::corpus_stats_cmd(&manifest, out.as_deref())
            }
            CorpusCmd::Synth {
                n,
                shows,
                cue,
                terminal_frac,
                seed,
                out,
            } => commands::corpus_synth_cmd(n, shows, cue, terminal_frac, seed, &out),
            CorpusCmd::Released { out } => commands::corpus_released_cmd(&out),
        },
        Command::Prep(cmd) => match cmd {
            PrepCmd::Chunks {
                manifest,
                mode,
                window,
                out,
            } => {
                let mode: ChunkMode = mode
                    .parse()
                    .or_config(format!("chunk mode `{mode}` (expected ref or fixed)"))?;
                commands::prep_chunks_cmd(&manifest, mode, window, &out)
            }
            PrepCmd::Transcribe {
                chunks,
                asr,
                cache,
                out,
            } => commands::prep_transcribe_cmd(&chunks, &asr, cache.as_deref(), out.as_deref()),
        },
        Command::Encode(args) => {
            let modality = match args.modality.as_str() {
                "audio" => Modality::Audio,
                "text" => Modality::Text,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown modality `{other}` (expected audio or text)"
                    )))
                }
            };
            commands::encode_cmd(modality, &args.provider, &args.in_dir, &args.cache)
        }
        Command::Exp(cmd) => match cmd {
            ExpCmd::Run(args) => {
                let overrides = exp_overrides(&args, cli.jobs)?;
                let config = resolve_config(args.config.as_deref(), &overrides)?;
                configure_jobs(config.jobs);
                commands::exp_run_cmd(&config)
            }
            ExpCmd::Status(args) => {
                let overrides = exp_overrides(&args, cli.jobs)?;
                let config = resolve_config(args.config.as_deref(), &overrides)?;
                commands::exp_status_cmd(&config)
            }
        },
        Command::Analyze(cmd) => match cmd {
            AnalyzeCmd::Tables { records, by, out } => {
                commands::analyze_tables_cmd(&records, &by, out.as_deref())
            }
            AnalyzeCmd::Lmm { records, out } => commands::analyze_lmm_cmd(&records, &out),
            AnalyzeCmd::Posthoc {
                fit,
                test,
                train,
                out,
            } => commands::analyze_posthoc_cmd(
                &fit,
                test.as_deref(),
                train.as_deref(),
                out.as_deref(),
            ),
            AnalyzeCmd::Kappa { ratings } => commands::analyze_kappa_cmd(&ratings),
            AnalyzeCmd::All { records, out } => commands::analyze_all_cmd(&records, &out),
        },
        Command::Report(args) => commands::report_cmd(&args.analysis, &args.out),
        Command::Run(args) => {
            let overrides = run_overrides(&args, cli.jobs)?;
            let config = resolve_config(args.config.as_deref(), &overrides)?;
            configure_jobs(config.jobs);
            let stages: Vec<Stage> = match &args.stages {
                None => Stage::ALL.to_vec(),
                Some(names) => names
                    .iter()
                    .map(|s| s.parse())
                    .collect::<Result<_, _>>()?,
            };
            stages::run_pipeline(&config, &stages)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
