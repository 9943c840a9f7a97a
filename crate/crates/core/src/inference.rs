//! Multiplier-bootstrap inference: perturbed refits, standard errors,
//! Wald intervals and trimmed-mean effect summaries.

use rand::distributions::Distribution;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DataError, Dataset, QuantileProcess};
use crate::process::{fit, fit_weighted, FitConfig, FitError};
use crate::rng::{mix64, stream_rng};
use crate::scalar::Scalar;

/// Normal quantile used for the Wald 95% intervals.
const WALD_Z: f64 = 1.959964;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("tau {tau} is beyond the point fit's range (tau_end = {tau_end})")]
    TauBeyondFit { tau: f64, tau_end: f64 },
    #[error("only {included} of {total} replicates reach tau {tau}; need at least {required}")]
    TooFewReplicates {
        tau: f64,
        included: usize,
        required: usize,
        total: usize,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Positive i.i.d. perturbation masses with unit mean and unit variance.
#[derive(Debug, Clone)]
pub struct PerturbWeights<F: Scalar> {
    pub xi: Vec<F>,
    pub seed: u64,
    pub stream: u64,
}

impl<F: Scalar> PerturbWeights<F>
where
    Exp1: Distribution<F>,
{
    /// Standard-exponential draws from the (seed, stream) counter pair.
    pub fn standard_exponential(n: usize, seed: u64, stream: u64) -> Self {
        let mut rng = stream_rng(seed, stream);
        let mut xi = Vec::with_capacity(n);
        while xi.len() < n {
            let draw: F = Exp1.sample(&mut rng);
            if draw > F::zero() {
                xi.push(draw);
            }
        }
        PerturbWeights { xi, seed, stream }
    }
}

impl<F: Scalar> PerturbWeights<F> {
    pub fn unit(n: usize) -> Self {
        PerturbWeights {
            xi: vec![F::one(); n],
            seed: 0,
            stream: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Wald,
    Percentile,
}

#[derive(Debug, Clone)]
pub struct BootstrapConfig<F: Scalar> {
    pub replicates: usize,
    pub seed: u64,
    pub ci: CiMethod,
    /// Fraction of replicates that must reach each requested tau.
    pub survival_floor: f64,
    /// Optional trimmed-mean effect range.
    pub trim: Option<(F, F)>,
    pub fit: FitConfig<F>,
}

impl<F: Scalar> BootstrapConfig<F> {
    pub fn new(replicates: usize, seed: u64) -> Self {
        BootstrapConfig {
            replicates,
            seed,
            ci: CiMethod::Wald,
            survival_floor: 0.5,
            trim: None,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrimmedSummary<F: Scalar> {
    pub tau1: F,
    pub tau2: F,
    pub point: Vec<F>,
    pub se: Vec<F>,
    pub ci: Vec<(F, F)>,
    pub excluded: usize,
}

/// Per-tau bootstrap draws, standard errors and confidence intervals.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BootstrapSummary<F: Scalar> {
    pub taus: Vec<F>,
    /// Point estimates of the unperturbed fit, one coefficient row per tau.
    pub point: Vec<Vec<F>>,
    /// Included replicate draws per tau (replicate-major rows).
    pub draws: Vec<Vec<Vec<F>>>,
    pub se: Vec<Vec<F>>,
    pub ci: Vec<Vec<(F, F)>>,
    /// Replicates whose estimated range ended before the given tau.
    pub excluded: Vec<usize>,
    pub replicates: usize,
    pub trimmed: Option<TrimmedSummary<F>>,
}

/// Refit with the given perturbation masses.
pub fn perturbed_fit<F: Scalar>(
    dataset: &Dataset<F>,
    weights: &PerturbWeights<F>,
    config: &FitConfig<F>,
) -> Result<QuantileProcess<F>, FitError> {
    fit_weighted(dataset, &weights.xi, config)
}

/// Multiplier bootstrap with standard-exponential masses.
pub fn bootstrap<F: Scalar>(
    dataset: &Dataset<F>,
    taus: &[F],
    config: &BootstrapConfig<F>,
) -> Result<BootstrapSummary<F>, InferenceError>
where
    Exp1: Distribution<F>,
{
    if config.replicates < 2 {
        return Err(InferenceError::Invalid(
            "at least two bootstrap replicates are required".into(),
        ));
    }
    let draws: Vec<PerturbWeights<F>> = (0..config.replicates)
        .map(|r| PerturbWeights::standard_exponential(dataset.n(), config.seed, r as u64))
        .collect();
    bootstrap_with_draws(dataset, taus, &draws, config)
}

/// Bootstrap over explicitly supplied perturbation draws.
pub fn bootstrap_with_draws<F: Scalar>(
    dataset: &Dataset<F>,
    taus: &[F],
    draws: &[PerturbWeights<F>],
    config: &BootstrapConfig<F>,
) -> Result<BootstrapSummary<F>, InferenceError> {
    let point_process = fit(dataset, &config.fit)?;
    for &tau in taus {
        if !(tau >= F::zero() && tau < point_process.tau_end()) {
            return Err(InferenceError::TauBeyondFit {
                tau: tau.as_f64(),
                tau_end: point_process.tau_end().as_f64(),
            });
        }
    }
    if let Some((t1, t2)) = config.trim {
        if !(t1 >= F::zero() && t1 < t2 && t2 <= point_process.tau_end()) {
            return Err(InferenceError::TauBeyondFit {
                tau: t2.as_f64(),
                tau_end: point_process.tau_end().as_f64(),
            });
        }
    }

    let processes: Vec<QuantileProcess<F>> = draws
        .par_iter()
        .map(|w| perturbed_fit(dataset, w, &config.fit))
        .collect::<Result<_, _>>()?;

    let total = processes.len();
    let required = ((config.survival_floor * total as f64).ceil() as usize).max(2);
    let p = dataset.p();
    let mut point = Vec::with_capacity(taus.len());
    let mut all_draws = Vec::with_capacity(taus.len());
    let mut se = Vec::with_capacity(taus.len());
    let mut ci = Vec::with_capacity(taus.len());
    let mut excluded = Vec::with_capacity(taus.len());

    for &tau in taus {
        let estimate = point_process.evaluate(tau)?.to_vec();
        let included: Vec<Vec<F>> = processes
            .iter()
            .filter(|proc| tau < proc.tau_end())
            .map(|proc| proc.evaluate(tau).map(|c| c.to_vec()))
            .collect::<Result<_, _>>()?;
        let n_excl = total - included.len();
        if included.len() < required {
            return Err(InferenceError::TooFewReplicates {
                tau: tau.as_f64(),
                included: included.len(),
                required,
                total,
            });
        }
        let se_row = column_sd(&included, p);
        let ci_row = intervals(config.ci, &estimate, &se_row, &included, p);
        point.push(estimate);
        all_draws.push(included);
        se.push(se_row);
        ci.push(ci_row);
        excluded.push(n_excl);
    }

    let trimmed = match config.trim {
        Some((t1, t2)) => {
            let estimate = trimmed_mean_effect(&point_process, t1, t2)?;
            let included: Vec<Vec<F>> = processes
                .iter()
                .filter(|proc| t2 <= proc.tau_end())
                .map(|proc| trimmed_mean_effect(proc, t1, t2))
                .collect::<Result<_, _>>()?;
            let n_excl = total - included.len();
            if included.len() < required {
                return Err(InferenceError::TooFewReplicates {
                    tau: t2.as_f64(),
                    included: included.len(),
                    required,
                    total,
                });
            }
            let se_row = column_sd(&included, p);
            let ci_row = intervals(config.ci, &estimate, &se_row, &included, p);
            Some(TrimmedSummary {
                tau1: t1,
                tau2: t2,
                point: estimate,
                se: se_row,
                ci: ci_row,
                excluded: n_excl,
            })
        }
        None => None,
    };

    Ok(BootstrapSummary {
        taus: taus.to_vec(),
        point,
        draws: all_draws,
        se,
        ci,
        excluded,
        replicates: total,
        trimmed,
    })
}

fn column_sd<F: Scalar>(rows: &[Vec<F>], p: usize) -> Vec<F> {
    let m = rows.len();
    let mf = F::real(m as f64);
    (0..p)
        .map(|k| {
            let mean: F = rows.iter().map(|r| r[k]).sum::<F>() / mf;
            let ss: F = rows
                .iter()
                .map(|r| {
                    let d = r[k] - mean;
                    d * d
                })
                .sum();
            (ss / F::real((m - 1) as f64)).sqrt()
        })
        .collect()
}

fn intervals<F: Scalar>(
    method: CiMethod,
    point: &[F],
    se: &[F],
    rows: &[Vec<F>],
    p: usize,
) -> Vec<(F, F)> {
    match method {
        CiMethod::Wald => {
            let z = F::real(WALD_Z);
            point
                .iter()
                .zip(se)
                .map(|(&b, &s)| (b - z * s, b + z * s))
                .collect()
        }
        CiMethod::Percentile => (0..p)
            .map(|k| {
                let mut col: Vec<F> = rows.iter().map(|r| r[k]).collect();
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                (
                    percentile_sorted(&col, 0.025),
                    percentile_sorted(&col, 0.975),
                )
            })
            .collect(),
    }
}

fn percentile_sorted<F: Scalar>(sorted: &[F], q: f64) -> F {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let pos = q * (m - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = F::real(pos - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Exact average of the piecewise-constant process over `[tau1, tau2)`.
pub fn trimmed_mean_effect<F: Scalar>(
    process: &QuantileProcess<F>,
    tau1: F,
    tau2: F,
) -> Result<Vec<F>, FitError> {
    if !(tau1 >= F::zero() && tau1 < tau2 && tau2 <= process.tau_end()) {
        return Err(FitError::Data(DataError::TauOutOfRange {
            tau: tau2.as_f64(),
            tau_end: process.tau_end().as_f64(),
        }));
    }
    let p = process.p();
    let mut acc = vec![F::zero(); p];
    for k in 0..process.segment_count() {
        let (start, end) = process.segment_bounds(k);
        let lo = start.max(tau1);
        let hi = end.min(tau2);
        if hi > lo {
            crate::linalg::axpy(&mut acc, hi - lo, &process.coefficients()[k]);
        }
    }
    let width = tau2 - tau1;
    Ok(acc.into_iter().map(|v| v / width).collect())
}

/// Derive a replicate-specific seed for nested resampling.
pub fn replicate_seed(seed: u64, replicate: u64) -> u64 {
    mix64(seed, replicate.wrapping_add(1))
}
