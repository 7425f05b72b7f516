//! Statistics over prediction records: accuracy aggregation, inter-rater
//! agreement, the linear mixed model behind the headline comparisons, and
//! Bonferroni-adjusted pairwise contrasts.

pub mod kappa;
pub mod lmm;
pub mod posthoc;

pub use kappa::fleiss_kappa;
pub use lmm::{
    fit_lmm, fit_reml, CellMean, Coding, ConvergenceReport, MixedModelFit, MixedModelSpec,
    RemlFit, RemlProblem, VarianceMode,
};
pub use posthoc::{posthoc_contrasts, ContrastResult};

use crate::corpus::{duration_bucket, CorpusError};
use crate::experiment::{InputSetting, PredictionRecord};
use crate::heads::Architecture;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("no prediction records to analyze")]
    EmptyRecords,
    #[error("item {item} has {got} ratings, expected {expected}")]
    UnequalRaterCounts {
        item: usize,
        got: usize,
        expected: usize,
    },
    #[error("Fleiss' kappa needs at least two raters, got {got}")]
    TooFewRaters { got: usize },
    #[error("ratings table is empty or has no categories")]
    EmptyRatings,
    #[error("design matrix is rank deficient: {detail}")]
    RankDeficientDesign { detail: String },
    #[error("sample {sample} appears under shows {first} and {second}; grouping must be nested")]
    NonNestedGrouping {
        sample: String,
        first: String,
        second: String,
    },
    #[error("variance optimization did not converge after {sweeps} sweeps (last relative change {last_change:e})")]
    MaxIterationsExceeded { sweeps: usize, last_change: f64 },
    #[error("mixed-model fit did not converge; refusing post-hoc contrasts")]
    UnconvergedFit,
    #[error("bad input: {detail}")]
    BadInput { detail: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

// ---------------------------------------------------------------------------
// Accuracy aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Show,
    DurationBucket,
    Overall,
}

/// One aggregation cell: a grouping key × (architecture, train, test).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    /// Show id, duration-bucket name, or "overall".
    pub key: String,
    pub architecture: Architecture,
    pub train_setting: InputSetting,
    pub test_setting: InputSetting,
    /// Mean of `correct` over all records in the cell (seeds pooled).
    pub fraction: f64,
    /// The same mean as a percentage rounded to two decimals.
    pub mean_pct: f64,
    pub n_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub grouping: Grouping,
    pub rows: Vec<AccuracyRow>,
}

/// Mean accuracy per grouping key and (architecture, train, test) cell,
/// pooled over seeds and samples, as percentages rounded to two decimals.
pub fn aggregate_accuracy(
    records: &[PredictionRecord],
    grouping: Grouping,
) -> Result<AccuracyTable, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::EmptyRecords);
    }
    // (bucket order, key, arch, train, test) → (correct sum, count).
    let mut cells: BTreeMap<
        (u8, String, Architecture, InputSetting, InputSetting),
        (usize, usize),
    > = BTreeMap::new();
    for record in records {
        let (order, key) = match grouping {
            Grouping::Show => (0u8, record.show_id.clone()),
            Grouping::Overall => (0u8, "overall".to_string()),
            Grouping::DurationBucket => {
                let bucket = duration_bucket(record.duration)?;
                (bucket.index() as u8, bucket.name().to_string())
            }
        };
        let entry = cells
            .entry((
                order,
                key,
                record.architecture,
                record.train_setting,
                record.test_setting,
            ))
            .or_insert((0, 0));
        entry.0 += record.correct as usize;
        entry.1 += 1;
    }
    let rows = cells
        .into_iter()
        .map(|((_, key, architecture, train, test), (correct, count))| {
            let fraction = correct as f64 / count as f64;
            AccuracyRow {
                key,
                architecture,
                train_setting: train,
                test_setting: test,
                fraction,
                mean_pct: crate::util::round2(100.0 * fraction),
                n_records: count,
            }
        })
        .collect();
    Ok(AccuracyTable { grouping, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn record(
        sample: &str,
        show: &str,
        arch: Architecture,
        correct: u8,
        duration: f64,
    ) -> PredictionRecord {
        PredictionRecord {
            sample_id: sample.into(),
            show_id: show.into(),
            architecture: arch,
            train_setting: InputSetting::RefAuto,
            test_setting: InputSetting::RefAuto,
            fold: show.into(),
            seed: 0,
            predicted_label: Label::Terminal,
            true_label: if correct == 1 {
                Label::Terminal
            } else {
                Label::NonTerminal
            },
            correct,
            duration,
        }
    }

    #[test]
    fn nine_of_ten_correct_is_ninety_percent() {
        let records: Vec<PredictionRecord> = (0..10)
            .map(|i| {
                record(
                    &format!("s{i}"),
                    "show",
                    Architecture::EF,
                    u8::from(i > 0),
                    1.0,
                )
            })
            .collect();
        let table = aggregate_accuracy(&records, Grouping::Overall).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].mean_pct, 90.00);
        assert_eq!(table.rows[0].key, "overall");
        assert_eq!(table.rows[0].n_records, 10);
    }

    #[test]
    fn duration_grouping_partitions_into_the_four_buckets() {
        let durations = [0.3, 0.7, 1.5, 3.0, 0.4, 0.9, 1.9, 2.5];
        let records: Vec<PredictionRecord> = durations
            .iter()
            .enumerate()
            .map(|(i, &d)| record(&format!("s{i}"), "show", Architecture::TO, 1, d))
            .collect();
        let table = aggregate_accuracy(&records, Grouping::DurationBucket).unwrap();
        let keys: Vec<&str> = table.rows.iter().map(|r| r.key.as_str()).collect();
        assert_eq!(keys, vec!["≤0.5", "0.5<x≤1", "1<x≤2", ">2"]);
        assert!(table.rows.iter().all(|r| r.n_records == 2));
    }

    #[test]
    fn overall_is_the_record_weighted_mean_of_show_cells() {
        // 3 correct of 4 in showA, 1 of 6 in showB → overall 4/10.
        let mut records = Vec::new();
        for i in 0..4 {
            records.push(record(
                &format!("a{i}"),
                "showA",
                Architecture::AO,
                u8::from(i < 3),
                1.0,
            ));
        }
        for i in 0..6 {
            records.push(record(
                &format!("b{i}"),
                "showB",
                Architecture::AO,
                u8::from(i < 1),
                1.0,
            ));
        }
        let overall = aggregate_accuracy(&records, Grouping::Overall).unwrap();
        let by_show = aggregate_accuracy(&records, Grouping::Show).unwrap();
        let weighted: f64 = by_show
            .rows
            .iter()
            .map(|r| r.fraction * r.n_records as f64)
            .sum::<f64>()
            / records.len() as f64;
        assert!((overall.rows[0].fraction - weighted).abs() < 1e-15);
        assert!((overall.rows[0].fraction - 0.4).abs() < 1e-15);
    }

    #[test]
    fn empty_records_are_rejected() {
        assert!(matches!(
            aggregate_accuracy(&[], Grouping::Overall),
            Err(AnalysisError::EmptyRecords)
        ));
    }

    #[test]
    fn cells_are_keyed_by_architecture_and_settings() {
        let mut records = vec![record("s0", "show", Architecture::TO, 1, 1.0)];
        let mut other = record("s0", "show", Architecture::TO, 0, 1.0);
        other.test_setting = InputSetting::ThreeSAuto;
        records.push(other);
        let table = aggregate_accuracy(&records, Grouping::Show).unwrap();
        assert_eq!(table.rows.len(), 2, "different test settings, different cells");
        assert_eq!(table.rows[0].mean_pct + table.rows[1].mean_pct, 100.0);
    }
}
