//! Linear mixed model with random intercepts for shows and for samples
//! nested in shows, fit by REML.
//!
//! The response is per-record correctness; fixed effects are the classifier
//! architecture crossed with the test and train input settings
//! (`model*(test+train)` under treatment coding). Because both random
//! effects are intercepts over nested groups, the covariance matrix is
//! block-structured and everything the REML criterion needs can be reduced
//! to per-sample and per-show sufficient statistics once, after which each
//! evaluation costs O(p²·groups) regardless of the number of records.

use super::AnalysisError;
use crate::experiment::{InputSetting, PredictionRecord};
use crate::heads::Architecture;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;

/// Treatment (dummy) coding for the fixed effects. The first level of each
/// factor, sorted by its string form, is the reference level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coding {
    pub models: Vec<Architecture>,
    pub tests: Vec<InputSetting>,
    pub trains: Vec<InputSetting>,
}

impl Coding {
    /// Collect the factor levels present in the records, sorted by their
    /// string names so the reference levels are deterministic.
    pub fn from_records(records: &[PredictionRecord]) -> Coding {
        let mut models: Vec<Architecture> = records.iter().map(|r| r.architecture).collect();
        models.sort_by_key(|a| a.as_str());
        models.dedup();
        let mut tests: Vec<InputSetting> = records.iter().map(|r| r.test_setting).collect();
        tests.sort_by_key(|s| s.as_str());
        tests.dedup();
        let mut trains: Vec<InputSetting> = records.iter().map(|r| r.train_setting).collect();
        trains.sort_by_key(|s| s.as_str());
        trains.dedup();
        Coding {
            models,
            tests,
            trains,
        }
    }

    /// Number of fixed-effect columns: intercept, main-effect dummies, and
    /// the model:test and model:train interaction dummies.
    pub fn p(&self) -> usize {
        let m = self.models.len() - 1;
        let t = self.tests.len() - 1;
        let r = self.trains.len() - 1;
        1 + m + t + r + m * t + m * r
    }

    /// Column names in design order, e.g. `(Intercept)`, `modelEF`,
    /// `testref_auto`, `trainref_man`, `modelEF:testref_auto`.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["(Intercept)".to_string()];
        for m in &self.models[1..] {
            names.push(format!("model{m}"));
        }
        for t in &self.tests[1..] {
            names.push(format!("test{}", t.as_str()));
        }
        for r in &self.trains[1..] {
            names.push(format!("train{}", r.as_str()));
        }
        for t in &self.tests[1..] {
            for m in &self.models[1..] {
                names.push(format!("model{}:test{}", m, t.as_str()));
            }
        }
        for r in &self.trains[1..] {
            for m in &self.models[1..] {
                names.push(format!("model{}:train{}", m, r.as_str()));
            }
        }
        names
    }

    /// Design row for one factor combination. The arguments must be levels
    /// of this coding; unknown levels encode (wrongly) as the reference.
    pub fn design_row(
        &self,
        architecture: Architecture,
        test: InputSetting,
        train: InputSetting,
    ) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.p());
        row.push(1.0);
        for &m in &self.models[1..] {
            row.push(f64::from(m == architecture));
        }
        for &t in &self.tests[1..] {
            row.push(f64::from(t == test));
        }
        for &r in &self.trains[1..] {
            row.push(f64::from(r == train));
        }
        for &t in &self.tests[1..] {
            for &m in &self.models[1..] {
                row.push(f64::from(m == architecture && t == test));
            }
        }
        for &r in &self.trains[1..] {
            for &m in &self.models[1..] {
                row.push(f64::from(m == architecture && r == train));
            }
        }
        row
    }
}

/// How one variance component is treated during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Estimated from the data.
    Free,
    /// Held fixed at the given ratio of component variance to residual
    /// variance. `Pinned(0.0)` removes the component entirely.
    Pinned(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedModelSpec {
    pub sample_variance: VarianceMode,
    pub show_variance: VarianceMode,
    /// Budget of coordinate-descent sweeps over the variance ratios.
    pub max_sweeps: usize,
}

impl Default for MixedModelSpec {
    fn default() -> Self {
        MixedModelSpec {
            sample_variance: VarianceMode::Free,
            show_variance: VarianceMode::Free,
            max_sweeps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub sweeps: usize,
    /// Relative deviance change over the last sweep.
    pub final_change: f64,
    /// Free variance components that collapsed to the zero boundary.
    pub boundary: Vec<String>,
}

/// Per-sample sums grouped by how many records the sample has.
#[derive(Debug)]
struct MStat {
    /// Σ over samples of the outer product of the sample's summed design row.
    g: DMatrix<f64>,
    /// Σ over samples of (summed design row) × (summed response).
    h: DVector<f64>,
    /// Σ over samples of the squared summed response.
    q: f64,
    count: usize,
}

/// One show's per-sample sums, again grouped by records per sample.
#[derive(Debug)]
struct ShowM {
    t_x: DVector<f64>,
    t_y: f64,
    count: usize,
}

/// Sufficient statistics for the nested random-intercept REML criterion.
#[derive(Debug)]
pub struct RemlProblem {
    n: usize,
    p: usize,
    n_samples: usize,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    by_m: BTreeMap<usize, MStat>,
    shows: BTreeMap<String, BTreeMap<usize, ShowM>>,
}

struct ThetaEval {
    deviance: f64,
    beta: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    sigma2_e: f64,
    /// The fixed effects reproduce the response exactly (zero residual).
    degenerate: bool,
}

impl RemlProblem {
    /// Build the sufficient statistics from raw rows. `sample_ids` must be
    /// nested in `show_ids`: a sample may not appear under two shows.
    pub fn new(
        rows: &[Vec<f64>],
        y: &[f64],
        sample_ids: &[&str],
        show_ids: &[&str],
    ) -> Result<RemlProblem, AnalysisError> {
        let n = rows.len();
        if n == 0 {
            return Err(AnalysisError::EmptyRecords);
        }
        if y.len() != n || sample_ids.len() != n || show_ids.len() != n {
            return Err(AnalysisError::BadInput {
                detail: format!(
                    "row/response/grouping lengths disagree: {n}/{}/{}/{}",
                    y.len(),
                    sample_ids.len(),
                    show_ids.len()
                ),
            });
        }
        let p = rows[0].len();
        if p == 0 {
            return Err(AnalysisError::BadInput {
                detail: "design matrix has no columns".into(),
            });
        }
        if n <= p {
            return Err(AnalysisError::BadInput {
                detail: format!("need more rows ({n}) than design columns ({p})"),
            });
        }

        let mut xtx = DMatrix::zeros(p, p);
        let mut xty = DVector::zeros(p);
        let mut yty = 0.0;
        struct SampleAcc {
            show: String,
            sx: DVector<f64>,
            sy: f64,
            m: usize,
        }
        let mut samples: BTreeMap<&str, SampleAcc> = BTreeMap::new();
        for i in 0..n {
            if rows[i].len() != p {
                return Err(AnalysisError::BadInput {
                    detail: format!("row {i} has {} columns, expected {p}", rows[i].len()),
                });
            }
            if !y[i].is_finite() || rows[i].iter().any(|v| !v.is_finite()) {
                return Err(AnalysisError::BadInput {
                    detail: format!("non-finite value in row {i}"),
                });
            }
            let xv = DVector::from_column_slice(&rows[i]);
            xtx.ger(1.0, &xv, &xv, 1.0);
            xty.axpy(y[i], &xv, 1.0);
            yty += y[i] * y[i];
            match samples.get_mut(sample_ids[i]) {
                Some(acc) => {
                    if acc.show != show_ids[i] {
                        return Err(AnalysisError::NonNestedGrouping {
                            sample: sample_ids[i].to_string(),
                            first: acc.show.clone(),
                            second: show_ids[i].to_string(),
                        });
                    }
                    acc.sx += &xv;
                    acc.sy += y[i];
                    acc.m += 1;
                }
                None => {
                    samples.insert(
                        sample_ids[i],
                        SampleAcc {
                            show: show_ids[i].to_string(),
                            sx: xv,
                            sy: y[i],
                            m: 1,
                        },
                    );
                }
            }
        }

        let n_samples = samples.len();
        let mut by_m: BTreeMap<usize, MStat> = BTreeMap::new();
        let mut shows: BTreeMap<String, BTreeMap<usize, ShowM>> = BTreeMap::new();
        for acc in samples.into_values() {
            let stat = by_m.entry(acc.m).or_insert_with(|| MStat {
                g: DMatrix::zeros(p, p),
                h: DVector::zeros(p),
                q: 0.0,
                count: 0,
            });
            stat.g.ger(1.0, &acc.sx, &acc.sx, 1.0);
            stat.h.axpy(acc.sy, &acc.sx, 1.0);
            stat.q += acc.sy * acc.sy;
            stat.count += 1;
            let show = shows.entry(acc.show).or_default();
            let sm = show.entry(acc.m).or_insert_with(|| ShowM {
                t_x: DVector::zeros(p),
                t_y: 0.0,
                count: 0,
            });
            sm.t_x += &acc.sx;
            sm.t_y += acc.sy;
            sm.count += 1;
        }

        Ok(RemlProblem {
            n,
            p,
            n_samples,
            xtx,
            xty,
            yty,
            by_m,
            shows,
        })
    }

    pub fn n_records(&self) -> usize {
        self.n
    }

    pub fn n_params(&self) -> usize {
        self.p
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_shows(&self) -> usize {
        self.shows.len()
    }

    /// REML deviance (−2 restricted log-likelihood, residual variance
    /// profiled out) at the given variance ratios. A response the fixed
    /// effects reproduce exactly has deviance −∞.
    pub fn deviance(&self, gamma_sample: f64, gamma_show: f64) -> Result<f64, AnalysisError> {
        Ok(self.eval(gamma_sample, gamma_show)?.deviance)
    }

    fn eval(&self, gamma_sample: f64, gamma_show: f64) -> Result<ThetaEval, AnalysisError> {
        for (name, g) in [("sample", gamma_sample), ("show", gamma_show)] {
            if !g.is_finite() || g < 0.0 {
                return Err(AnalysisError::BadInput {
                    detail: format!("{name} variance ratio must be finite and non-negative, got {g}"),
                });
            }
        }

        // Absorb the sample-level intercepts: with A = I + γ_s Z_s Z_sᵀ,
        // uᵀA⁻¹v = uᵀv − Σ_samples γ_s/(1+γ_s m) S_u S_v over per-sample sums.
        let mut mxx = self.xtx.clone();
        let mut mxy = self.xty.clone();
        let mut myy = self.yty;
        let mut logdet = 0.0;
        for (&m, stat) in &self.by_m {
            let mf = m as f64;
            let a = gamma_sample / (1.0 + gamma_sample * mf);
            if a != 0.0 {
                mxx -= &stat.g * a;
                mxy.axpy(-a, &stat.h, 1.0);
                myy -= a * stat.q;
            }
            logdet += stat.count as f64 * (1.0 + gamma_sample * mf).ln();
        }

        // Absorb the show-level intercepts by rank-one downdates: the show
        // indicators are mutually orthogonal, so the Woodbury middle matrix
        // is diagonal with entries 1/γ_g + c_k.
        for show in self.shows.values() {
            let mut c = 0.0;
            let mut xt = DVector::zeros(self.p);
            let mut yt = 0.0;
            for (&m, sm) in show {
                let mf = m as f64;
                let w = 1.0 / (1.0 + gamma_sample * mf);
                c += sm.count as f64 * mf * w;
                xt.axpy(w, &sm.t_x, 1.0);
                yt += w * sm.t_y;
            }
            let b = gamma_show / (1.0 + gamma_show * c);
            if b != 0.0 {
                mxx.ger(-b, &xt, &xt, 1.0);
                mxy.axpy(-b * yt, &xt, 1.0);
                myy -= b * yt * yt;
            }
            logdet += (1.0 + gamma_show * c).ln();
        }

        let chol = Cholesky::new(mxx).ok_or_else(|| AnalysisError::RankDeficientDesign {
            detail: format!(
                "XᵀV⁻¹X ({p}×{p}) is not positive definite; check for collinear factor levels",
                p = self.p
            ),
        })?;
        let beta = chol.solve(&mxy);
        let rvr = myy - beta.dot(&mxy);
        // Zero residual after the fixed effects means the response lies in
        // the design's column space, which holds at every variance ratio;
        // report a degenerate (perfect) fit instead of a finite deviance.
        let degenerate = rvr <= 1e-12 * self.yty.max(1.0);
        let df = (self.n - self.p) as f64;
        let (sigma2_e, deviance) = if degenerate {
            (0.0, f64::NEG_INFINITY)
        } else {
            let sigma2_e = rvr / df;
            let ldet_mxx: f64 =
                2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let deviance =
                logdet + ldet_mxx + df * (1.0 + (2.0 * std::f64::consts::PI * sigma2_e).ln());
            (sigma2_e, deviance)
        };
        Ok(ThetaEval {
            deviance,
            beta,
            chol,
            sigma2_e,
            degenerate,
        })
    }
}

/// A REML fit in estimation-space terms (dense matrices, variance ratios).
pub struct RemlFit {
    pub beta: DVector<f64>,
    pub cov_beta: DMatrix<f64>,
    pub gamma_sample: f64,
    pub gamma_show: f64,
    pub sigma2_residual: f64,
    pub sigma2_sample: f64,
    pub sigma2_show: f64,
    pub deviance: f64,
    pub reml_log_likelihood: f64,
    pub convergence: ConvergenceReport,
}

/// Golden-section minimum of a unimodal function on [a, b].
fn golden_min<F>(mut f: F, a0: f64, b0: f64) -> Result<f64, AnalysisError>
where
    F: FnMut(f64) -> Result<f64, AnalysisError>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a0, b0);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while b - a > 1e-10 * (1.0 + b.abs()) {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Fit the variance ratios by cyclic golden-section coordinate descent on
/// the REML deviance, then recover the fixed effects at the optimum.
pub fn fit_reml(
    problem: &RemlProblem,
    spec: &MixedModelSpec,
) -> Result<RemlFit, AnalysisError> {
    let modes = [spec.sample_variance, spec.show_variance];
    let mut gamma = [0.0f64; 2];
    let mut free = [false; 2];
    for (i, mode) in modes.iter().enumerate() {
        match *mode {
            VarianceMode::Free => {
                free[i] = true;
                gamma[i] = 1.0;
            }
            VarianceMode::Pinned(v) => {
                if !v.is_finite() || v < 0.0 {
                    return Err(AnalysisError::BadInput {
                        detail: format!("pinned variance ratio must be finite and non-negative, got {v}"),
                    });
                }
                gamma[i] = v;
            }
        }
    }

    // A zero-residual response is degenerate at every ratio point (the
    // response lies in the design's column space independently of the
    // weighting), so detect it once and return the exact-fit solution with
    // all variance components exactly zero instead of optimizing.
    if problem.eval(gamma[0], gamma[1])?.degenerate {
        let mut boundary = Vec::new();
        for (c, name) in [(0, "sample"), (1, "show")] {
            if free[c] {
                gamma[c] = 0.0;
                boundary.push(name.to_string());
            }
        }
        let eval = problem.eval(gamma[0], gamma[1])?;
        return Ok(RemlFit {
            beta: eval.beta,
            cov_beta: DMatrix::zeros(problem.p, problem.p),
            gamma_sample: gamma[0],
            gamma_show: gamma[1],
            sigma2_residual: 0.0,
            sigma2_sample: 0.0,
            sigma2_show: 0.0,
            deviance: f64::NEG_INFINITY,
            reml_log_likelihood: f64::INFINITY,
            convergence: ConvergenceReport {
                converged: true,
                sweeps: 0,
                final_change: 0.0,
                boundary,
            },
        });
    }

    let convergence = if free.iter().any(|&f| f) {
        let mut hi = [16.0f64; 2];
        let mut prev = problem.deviance(gamma[0], gamma[1])?;
        let mut result = None;
        for sweep in 1..=spec.max_sweeps.max(1) {
            for c in 0..2 {
                if !free[c] {
                    continue;
                }
                loop {
                    let opt = golden_min(
                        |v| {
                            let mut g = gamma;
                            g[c] = v;
                            problem.deviance(g[0], g[1])
                        },
                        0.0,
                        hi[c],
                    )?;
                    // An optimum against the upper bracket means the bracket
                    // was too small, not that the ratio is truly that value.
                    if opt > 0.95 * hi[c] && hi[c] < 1e8 {
                        hi[c] *= 2.0;
                        continue;
                    }
                    gamma[c] = opt;
                    break;
                }
            }
            let d = problem.deviance(gamma[0], gamma[1])?;
            let change = (prev - d).abs() / (1.0 + d.abs());
            if change <= 1e-8 {
                result = Some((sweep, change));
                break;
            }
            prev = d;
        }
        let (sweeps, final_change) = result.ok_or(AnalysisError::MaxIterationsExceeded {
            sweeps: spec.max_sweeps.max(1),
            last_change: f64::INFINITY,
        })?;
        let mut boundary = Vec::new();
        for (c, name) in [(0, "sample"), (1, "show")] {
            if free[c] && gamma[c] < 1e-10 {
                gamma[c] = 0.0;
                boundary.push(name.to_string());
            }
        }
        ConvergenceReport {
            converged: true,
            sweeps,
            final_change,
            boundary,
        }
    } else {
        ConvergenceReport {
            converged: true,
            sweeps: 0,
            final_change: 0.0,
            boundary: Vec::new(),
        }
    };

    let eval = problem.eval(gamma[0], gamma[1])?;
    let cov_beta = eval.chol.inverse() * eval.sigma2_e;
    Ok(RemlFit {
        beta: eval.beta,
        cov_beta,
        gamma_sample: gamma[0],
        gamma_show: gamma[1],
        sigma2_residual: eval.sigma2_e,
        sigma2_sample: gamma[0] * eval.sigma2_e,
        sigma2_show: gamma[1] * eval.sigma2_e,
        deviance: eval.deviance,
        reml_log_likelihood: -0.5 * eval.deviance,
        convergence,
    })
}

/// Model-implied mean correctness for one factor cell with a Wald 95% CI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub architecture: Architecture,
    pub test_setting: InputSetting,
    pub train_setting: InputSetting,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// A fitted mixed model in reporting-friendly form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedModelFit {
    pub coding: Coding,
    pub column_names: Vec<String>,
    pub beta: Vec<f64>,
    pub cov_beta: Vec<Vec<f64>>,
    pub sigma2_residual: f64,
    pub sigma2_sample: f64,
    pub sigma2_show: f64,
    pub reml_log_likelihood: f64,
    pub convergence: ConvergenceReport,
    pub cell_means: Vec<CellMean>,
    pub n_records: usize,
    pub n_samples: usize,
    pub n_shows: usize,
}

/// Fit correctness against architecture crossed with test and train
/// settings, with random intercepts for shows and samples within shows.
pub fn fit_lmm(
    records: &[PredictionRecord],
    spec: &MixedModelSpec,
) -> Result<MixedModelFit, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::EmptyRecords);
    }
    let coding = Coding::from_records(records);
    let rows: Vec<Vec<f64>> = records
        .iter()
        .map(|r| coding.design_row(r.architecture, r.test_setting, r.train_setting))
        .collect();
    let y: Vec<f64> = records.iter().map(|r| f64::from(r.correct)).collect();
    let sample_ids: Vec<&str> = records.iter().map(|r| r.sample_id.as_str()).collect();
    let show_ids: Vec<&str> = records.iter().map(|r| r.show_id.as_str()).collect();
    let problem = RemlProblem::new(&rows, &y, &sample_ids, &show_ids)?;
    let fit = fit_reml(&problem, spec)?;

    let z975 = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.975);
    let mut cell_means = Vec::new();
    for &architecture in &coding.models {
        for &test in &coding.tests {
            for &train in &coding.trains {
                let x = DVector::from_vec(coding.design_row(architecture, test, train));
                let mean = x.dot(&fit.beta);
                let var = (x.transpose() * &fit.cov_beta * &x)[(0, 0)].max(0.0);
                let half = z975 * var.sqrt();
                cell_means.push(CellMean {
                    architecture,
                    test_setting: test,
                    train_setting: train,
                    mean,
                    ci_low: mean - half,
                    ci_high: mean + half,
                });
            }
        }
    }

    let p = coding.p();
    let cov_beta = (0..p)
        .map(|i| (0..p).map(|j| fit.cov_beta[(i, j)]).collect())
        .collect();
    Ok(MixedModelFit {
        column_names: coding.column_names(),
        coding,
        beta: fit.beta.iter().copied().collect(),
        cov_beta,
        sigma2_residual: fit.sigma2_residual,
        sigma2_sample: fit.sigma2_sample,
        sigma2_show: fit.sigma2_show,
        reml_log_likelihood: fit.reml_log_likelihood,
        convergence: fit.convergence,
        cell_means,
        n_records: problem.n_records(),
        n_samples: problem.n_samples(),
        n_shows: problem.n_shows(),
    })
}
