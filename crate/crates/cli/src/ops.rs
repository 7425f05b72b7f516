//! Shared artifact-producing operations, used both by the standalone
//! subcommands and by the staged pipeline runner.

use crate::artifacts::{num, pct, read_csv, write_csv, write_json, Meta};
use crate::errors::{render_chain, Classify, CliError};
use crate::plots::{duration_svg, effects_svg, DurationSeries};
use std::collections::BTreeMap;
use std::path::Path;
use trp_core::analysis::{
    aggregate_accuracy, fit_lmm, posthoc_contrasts, AccuracyTable, Grouping, MixedModelFit,
    MixedModelSpec,
};
use trp_core::corpus::{duration_bucket, CorpusStats, DurationBucket};
use trp_core::experiment::{ExperimentError, InputSetting, PredictionRecord};
use trp_core::util::atomic_write;

pub const FIT_FILE: &str = "fit.json";

/// Classify experiment-layer failures: configuration mistakes exit 2,
/// everything else is a job failure.
pub fn map_experiment(what: &str, e: ExperimentError) -> CliError {
    match e {
        ExperimentError::BadConfig { .. } | ExperimentError::TooFewShows { .. } => {
            CliError::Config(format!("{what}: {}", render_chain(&e)))
        }
        other => CliError::Job(format!("{what}: {}", render_chain(&other))),
    }
}

// ---------------------------------------------------------------------------
// Corpus statistics
// ---------------------------------------------------------------------------

/// Human-readable rendering of corpus statistics: label × duration-bucket
/// breakdown, then per-show sample counts and total durations.
pub fn render_stats_text(stats: &CorpusStats) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "samples: {} (Terminal {}, NonTerminal {}), total duration {:.2} s",
        stats.total_samples, stats.terminal.count, stats.non_terminal.count,
        stats.total_duration_secs
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<13}{:>7}  {:>6} {:>9} {:>7} {:>5}",
        "label", "count", "≤0.5", "0.5<x≤1", "1<x≤2", ">2"
    );
    for b in [&stats.terminal, &stats.non_terminal] {
        let _ = writeln!(
            out,
            "{:<13}{:>7}  {:>5}% {:>8}% {:>6}% {:>4}%",
            b.label.as_str(),
            b.count,
            b.bucket_percent[0],
            b.bucket_percent[1],
            b.bucket_percent[2],
            b.bucket_percent[3]
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<22}{:>8}  {:>12}", "show", "samples", "duration_s");
    for show in &stats.shows {
        let _ = writeln!(
            out,
            "{:<22}{:>8}  {:>12.2}",
            show.show_id, show.sample_count, show.total_duration_secs
        );
    }
    let _ = writeln!(
        out,
        "{:<22}{:>8}  {:>12.2}",
        "TOTAL", stats.total_samples, stats.total_duration_secs
    );
    out
}

/// Write the two statistics CSVs (label × bucket breakdown; per-show
/// counts and durations) into `dir`.
pub fn write_stats_artifacts(
    stats: &CorpusStats,
    dir: &Path,
    meta: &Meta,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).or_job(format!("creating {}", dir.display()))?;
    let mut label_rows = Vec::new();
    for b in [&stats.terminal, &stats.non_terminal] {
        let mut row = vec![b.label.as_str().to_string(), b.count.to_string()];
        row.extend(b.bucket_counts.iter().map(|c| c.to_string()));
        row.extend(b.bucket_percent.iter().map(|p| p.to_string()));
        label_rows.push(row);
    }
    write_csv(
        &dir.join("label_buckets.csv"),
        meta,
        &[
            "label", "count", "n ≤0.5", "n 0.5<x≤1", "n 1<x≤2", "n >2",
            "% ≤0.5", "% 0.5<x≤1", "% 1<x≤2", "% >2",
        ],
        &label_rows,
    )?;

    let mut show_rows: Vec<Vec<String>> = stats
        .shows
        .iter()
        .map(|s| {
            vec![
                s.show_id.clone(),
                s.sample_count.to_string(),
                format!("{:.2}", s.total_duration_secs),
            ]
        })
        .collect();
    show_rows.push(vec![
        "TOTAL".to_string(),
        stats.total_samples.to_string(),
        format!("{:.2}", stats.total_duration_secs),
    ]);
    write_csv(
        &dir.join("shows.csv"),
        meta,
        &["show", "samples", "duration_s"],
        &show_rows,
    )
}

// ---------------------------------------------------------------------------
// Accuracy tables
// ---------------------------------------------------------------------------

pub fn accuracy_table_csv(table: &AccuracyTable, meta: &Meta) -> String {
    let key_name = match table.grouping {
        Grouping::Show => "show",
        Grouping::DurationBucket => "duration_bucket",
        Grouping::Overall => "group",
    };
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.key.clone(),
                r.architecture.as_str().to_string(),
                r.train_setting.as_str().to_string(),
                r.test_setting.as_str().to_string(),
                r.n_records.to_string(),
                num(r.fraction),
                format!("{:.2}", r.mean_pct),
            ]
        })
        .collect();
    crate::artifacts::csv_document(
        meta,
        &[key_name, "architecture", "train", "test", "n_records", "accuracy", "accuracy_pct"],
        &rows,
    )
}

/// Accuracy pooled per (architecture, duration bucket) across every train
/// and test setting — the duration plot's data.
pub fn duration_series(records: &[PredictionRecord]) -> Result<Vec<DurationSeries>, CliError> {
    let mut acc: BTreeMap<(String, usize), (u64, u64)> = BTreeMap::new();
    for r in records {
        let bucket = duration_bucket(r.duration)
            .map_err(|e| CliError::Job(format!("record {}: {}", r.sample_id, render_chain(&e))))?;
        let entry = acc
            .entry((r.architecture.as_str().to_string(), bucket.index()))
            .or_insert((0, 0));
        entry.0 += u64::from(r.correct);
        entry.1 += 1;
    }
    let mut archs: Vec<String> = acc.keys().map(|(a, _)| a.clone()).collect();
    archs.dedup();
    Ok(archs
        .into_iter()
        .map(|arch| {
            let mut points = [None; 4];
            for (b, slot) in points.iter_mut().enumerate() {
                if let Some(&(c, n)) = acc.get(&(arch.clone(), b)) {
                    *slot = Some((c as f64 / n as f64, n as usize));
                }
            }
            DurationSeries {
                architecture: arch,
                points,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Analysis bundle
// ---------------------------------------------------------------------------

/// Run the full analysis over a prediction-record store and write every
/// analysis artifact into `dir`. Returns the mixed-model fit.
pub fn write_analysis_artifacts(
    records: &[PredictionRecord],
    dir: &Path,
    meta: &Meta,
) -> Result<MixedModelFit, CliError> {
    std::fs::create_dir_all(dir).or_job(format!("creating {}", dir.display()))?;
    if records.is_empty() {
        return Err(CliError::Prerequisite(
            "the records store is empty; run the experiment first".into(),
        ));
    }

    for (grouping, file) in [
        (Grouping::Overall, "accuracy_overall.csv"),
        (Grouping::Show, "accuracy_by_show.csv"),
        (Grouping::DurationBucket, "accuracy_by_duration.csv"),
    ] {
        let table = aggregate_accuracy(records, grouping)
            .or_job(format!("aggregating accuracy by {grouping:?}"))?;
        let doc = accuracy_table_csv(&table, meta);
        atomic_write(&dir.join(file), doc.as_bytes())
            .or_job(format!("writing {}", dir.join(file).display()))?;
    }

    let fit = fit_lmm(records, &MixedModelSpec::default()).or_job("fitting the mixed model")?;
    write_json(&dir.join(FIT_FILE), meta, "fit", &fit)?;

    // Post-hoc architecture contrasts at the reference cell (the
    // alphabetically-first test and train settings of the coding).
    let test = fit.coding.tests[0];
    let train = fit.coding.trains[0];
    if fit.coding.models.len() >= 2 {
        let contrasts = posthoc_contrasts(&fit, test, train).or_job("post-hoc contrasts")?;
        write_posthoc_csv(&dir.join("posthoc.csv"), meta, &contrasts, test, train)?;
    }

    write_effects_csv(&dir.join("effects.csv"), meta, &fit)?;

    let series = duration_series(records)?;
    write_duration_csv(&dir.join("duration_plot.csv"), meta, &series)?;
    Ok(fit)
}

pub fn write_posthoc_csv(
    path: &Path,
    meta: &Meta,
    contrasts: &[trp_core::analysis::ContrastResult],
    test: InputSetting,
    train: InputSetting,
) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = contrasts
        .iter()
        .map(|c| {
            vec![
                c.pair.0.as_str().to_string(),
                c.pair.1.as_str().to_string(),
                test.as_str().to_string(),
                train.as_str().to_string(),
                num(c.estimate),
                num(c.std_error),
                num(c.z),
                num(c.p_raw),
                num(c.p_adjusted),
                c.m.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        meta,
        &[
            "model_a", "model_b", "test", "train", "estimate", "std_error", "z", "p_raw",
            "p_adjusted", "m_comparisons",
        ],
        &rows,
    )
}

/// The effects table: exactly the spec'd schema
/// `architecture,train,test,mean,ci_low,ci_high`, one row per cell mean.
pub fn write_effects_csv(path: &Path, meta: &Meta, fit: &MixedModelFit) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = fit
        .cell_means
        .iter()
        .map(|c| {
            vec![
                c.architecture.as_str().to_string(),
                c.train_setting.as_str().to_string(),
                c.test_setting.as_str().to_string(),
                num(c.mean),
                num(c.ci_low),
                num(c.ci_high),
            ]
        })
        .collect();
    write_csv(
        path,
        meta,
        &["architecture", "train", "test", "mean", "ci_low", "ci_high"],
        &rows,
    )
}

pub fn write_duration_csv(
    path: &Path,
    meta: &Meta,
    series: &[DurationSeries],
) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for s in series {
        for (b, point) in s.points.iter().enumerate() {
            if let Some((fraction, n)) = point {
                rows.push(vec![
                    s.architecture.clone(),
                    DurationBucket::ALL[b].name().to_string(),
                    num(*fraction),
                    pct(*fraction),
                    n.to_string(),
                ]);
            }
        }
    }
    write_csv(
        path,
        meta,
        &["architecture", "bucket", "accuracy", "accuracy_pct", "n_records"],
        &rows,
    )
}

// ---------------------------------------------------------------------------
// Report bundle
// ---------------------------------------------------------------------------

/// Read a fit artifact (`{…, "fit": MixedModelFit}`) back.
pub fn read_fit(path: &Path) -> Result<MixedModelFit, CliError> {
    let bytes = std::fs::read(path).or_prereq(format!(
        "fit report {} (run `analyze lmm` or the analyze stage first)",
        path.display()
    ))?;
    let doc: serde_json::Value =
        serde_json::from_slice(&bytes).or_job(format!("parsing {}", path.display()))?;
    let fit = doc
        .get("fit")
        .ok_or_else(|| CliError::Job(format!("{} has no `fit` key", path.display())))?;
    serde_json::from_value(fit.clone()).or_job(format!("decoding fit from {}", path.display()))
}

fn bucket_from_name(name: &str) -> Result<usize, CliError> {
    DurationBucket::ALL
        .iter()
        .position(|b| b.name() == name)
        .ok_or_else(|| CliError::Job(format!("unknown duration bucket label `{name}`")))
}

/// Rebuild the duration-plot series from `duration_plot.csv`.
pub fn read_duration_series(path: &Path) -> Result<Vec<DurationSeries>, CliError> {
    let (header, rows) = read_csv(path)?;
    if header.len() < 5 {
        return Err(CliError::Job(format!(
            "{}: expected architecture,bucket,accuracy,accuracy_pct,n_records",
            path.display()
        )));
    }
    let mut by_arch: BTreeMap<String, [Option<(f64, usize)>; 4]> = BTreeMap::new();
    for row in &rows {
        let bucket = bucket_from_name(&row[1])?;
        let fraction: f64 = row[2]
            .parse()
            .or_job(format!("{}: bad accuracy `{}`", path.display(), row[2]))?;
        let n: usize = row[4]
            .parse()
            .or_job(format!("{}: bad n_records `{}`", path.display(), row[4]))?;
        by_arch.entry(row[0].clone()).or_default()[bucket] = Some((fraction, n));
    }
    Ok(by_arch
        .into_iter()
        .map(|(architecture, points)| DurationSeries {
            architecture,
            points,
        })
        .collect())
}

/// Emit the report bundle from an analysis directory: the effects plot and
/// duration plot as SVG + CSV pairs, plus the per-show accuracy table.
pub fn write_report_artifacts(
    analysis_dir: &Path,
    report_dir: &Path,
    meta: &Meta,
) -> Result<(), CliError> {
    let missing: Vec<&str> = [FIT_FILE, "duration_plot.csv", "accuracy_by_show.csv"]
        .into_iter()
        .filter(|f| !analysis_dir.join(f).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Prerequisite(format!(
            "analysis outputs missing from {}: {} (run `analyze` first)",
            analysis_dir.display(),
            missing.join(", ")
        )));
    }
    std::fs::create_dir_all(report_dir)
        .or_job(format!("creating {}", report_dir.display()))?;

    let fit = read_fit(&analysis_dir.join(FIT_FILE))?;
    write_effects_csv(&report_dir.join("effects.csv"), meta, &fit)?;
    let svg = effects_svg(meta, &fit.cell_means);
    atomic_write(&report_dir.join("effects.svg"), svg.as_bytes())
        .or_job("writing effects.svg")?;

    let series = read_duration_series(&analysis_dir.join("duration_plot.csv"))?;
    write_duration_csv(&report_dir.join("duration.csv"), meta, &series)?;
    let svg = duration_svg(meta, &series);
    atomic_write(&report_dir.join("duration.svg"), svg.as_bytes())
        .or_job("writing duration.svg")?;

    let (header, rows) = read_csv(&analysis_dir.join("accuracy_by_show.csv"))?;
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&report_dir.join("by_show.csv"), meta, &header_refs, &rows)?;
    Ok(())
}
