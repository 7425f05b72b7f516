//! Pairwise architecture contrasts at a fixed test/train setting, with
//! Bonferroni adjustment over all architecture pairs.

use super::lmm::MixedModelFit;
use super::AnalysisError;
use crate::experiment::InputSetting;
use crate::heads::Architecture;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// One pairwise comparison. `estimate` is the model-implied mean of
/// `pair.1` minus that of `pair.0`, with pairs in the coding's model order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastResult {
    pub pair: (Architecture, Architecture),
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_raw: f64,
    /// Bonferroni: `min(1, m · p_raw)` over the `m` architecture pairs.
    pub p_adjusted: f64,
    pub m: usize,
}

/// All architecture pairs compared at one (test, train) cell via Wald tests
/// on linear contrasts of the fitted fixed effects.
pub fn posthoc_contrasts(
    fit: &MixedModelFit,
    test: InputSetting,
    train: InputSetting,
) -> Result<Vec<ContrastResult>, AnalysisError> {
    if !fit.convergence.converged {
        return Err(AnalysisError::UnconvergedFit);
    }
    if !fit.coding.tests.contains(&test) {
        return Err(AnalysisError::BadInput {
            detail: format!("test setting {} is not in the fitted model", test.as_str()),
        });
    }
    if !fit.coding.trains.contains(&train) {
        return Err(AnalysisError::BadInput {
            detail: format!("train setting {} is not in the fitted model", train.as_str()),
        });
    }
    let k = fit.coding.models.len();
    if k < 2 {
        return Err(AnalysisError::BadInput {
            detail: "post-hoc contrasts need at least two architectures".into(),
        });
    }
    let m = k * (k - 1) / 2;
    let p = fit.coding.p();
    let beta = DVector::from_column_slice(&fit.beta);
    let normal = Normal::new(0.0, 1.0).unwrap();

    let mut results = Vec::with_capacity(m);
    for i in 0..k {
        for j in (i + 1)..k {
            let xi = fit.coding.design_row(fit.coding.models[i], test, train);
            let xj = fit.coding.design_row(fit.coding.models[j], test, train);
            let d = DVector::from_iterator(p, xi.iter().zip(&xj).map(|(a, b)| b - a));
            let estimate = d.dot(&beta);
            let mut var = 0.0;
            for a in 0..p {
                for b in 0..p {
                    var += d[a] * fit.cov_beta[a][b] * d[b];
                }
            }
            let std_error = var.max(0.0).sqrt();
            let z = if std_error > 0.0 { estimate / std_error } else { 0.0 };
            let p_raw = (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0);
            results.push(ContrastResult {
                pair: (fit.coding.models[i], fit.coding.models[j]),
                estimate,
                std_error,
                z,
                p_raw,
                p_adjusted: (m as f64 * p_raw).min(1.0),
                m,
            });
        }
    }
    Ok(results)
}
