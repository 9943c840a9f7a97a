//! Sequential rounds chained into the full quantile-coefficient process,
//! plus the estimating-equation residual and split-value traces.

use thiserror::Error;

use crate::linalg::{self, dot};
use crate::model::{Dataset, DataError, PiecewiseLinear, QuantileProcess, SegmentTrace};
use crate::scalar::Scalar;
use crate::solver::{self, RoundInput, SolveError};

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("estimating-equation residual {norm} at tau {tau} exceeds bound {bound}")]
    ResidualCheckFailed { tau: f64, norm: f64, bound: f64 },
    #[error("process carries no weight trace")]
    TraceUnavailable,
}

/// Controls for the sequential fit.
#[derive(Debug, Clone)]
pub struct FitConfig<F: Scalar> {
    /// Ceiling on the estimated range; `None` means `1 - 1/n`.
    pub tau_max: Option<F>,
    /// Verify the estimating equation on the fitted process.
    pub residual_check: bool,
    /// Safety bound on rounds; `None` means `10 n`.
    pub max_rounds: Option<usize>,
}

impl<F: Scalar> Default for FitConfig<F> {
    fn default() -> Self {
        FitConfig {
            tau_max: None,
            residual_check: true,
            max_rounds: None,
        }
    }
}

impl<F: Scalar> FitConfig<F> {
    fn tau_max_for(&self, n: usize) -> F {
        self.tau_max
            .unwrap_or_else(|| F::one() - F::one() / F::real(n as f64))
    }

    fn max_rounds_for(&self, n: usize) -> usize {
        self.max_rounds.unwrap_or(10 * n)
    }
}

/// Fit the full process with unit observation masses.
pub fn fit<F: Scalar>(
    dataset: &Dataset<F>,
    config: &FitConfig<F>,
) -> Result<QuantileProcess<F>, FitError> {
    let ones = vec![F::one(); dataset.n()];
    fit_weighted(dataset, &ones, config)
}

/// Fit the full process with positive per-observation masses.
pub fn fit_weighted<F: Scalar>(
    dataset: &Dataset<F>,
    weights: &[F],
    config: &FitConfig<F>,
) -> Result<QuantileProcess<F>, FitError> {
    let n = dataset.n();
    let tau_max = config.tau_max_for(n);
    if !(tau_max > F::zero() && tau_max < F::one()) {
        return Err(FitError::Data(DataError::Invalid(
            "tau_max must lie in (0,1)".into(),
        )));
    }
    let max_rounds = config.max_rounds_for(n);

    let mut phi = vec![F::zero(); n];
    let min_x = dataset
        .iter()
        .map(|o| o.x)
        .fold(F::infinity(), F::min);
    let mut warm = vec![F::zero(); dataset.p()];
    warm[0] = min_x - F::one();

    let mut tau = F::zero();
    let mut survival = F::one();
    let mut breakpoints: Vec<F> = Vec::new();
    let mut coefficients: Vec<Vec<F>> = Vec::new();
    let mut flags = Vec::new();
    let mut trace: Vec<SegmentTrace<F>> = Vec::new();
    let tau_end;

    loop {
        let input = RoundInput {
            dataset,
            weights,
            phi: &phi,
            warm_start: &warm,
            tau,
        };
        let round = match solver::solve_round(&input) {
            Ok(r) => r,
            Err(SolveError::UnboundedObjective) if !breakpoints.is_empty() => {
                tau_end = tau;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        breakpoints.push(tau);
        coefficients.push(round.beta.clone());
        flags.push(round.classification);
        trace.push(SegmentTrace {
            basis: round.state.s.clone(),
            w: round.state.w.clone(),
            gamma: round.state.gamma.clone(),
            extra_interpolated: round.state.extra_interpolated.clone(),
            h_hat: round.state.h_hat.clone(),
            lambda_b: round.lambda_b,
        });
        if round.lambda_b >= F::one() {
            tau_end = F::one();
            break;
        }
        survival = survival * (F::one() - round.lambda_b);
        let next_tau = F::one() - survival;
        if next_tau <= tau {
            return Err(FitError::Solve(SolveError::NonPositiveBreakpoint(
                round.lambda_b.as_f64(),
            )));
        }
        phi = round.phi_next;
        warm = round.beta;
        tau = next_tau;
        if tau >= tau_max || breakpoints.len() >= max_rounds {
            tau_end = tau;
            break;
        }
    }

    let process = QuantileProcess::assemble(breakpoints, coefficients, tau_end, flags, trace)?;
    if config.residual_check {
        residual_check(&process, dataset, weights)?;
    }
    Ok(process)
}

/// Spot-check the estimating equation on a sample of breakpoints.
fn residual_check<F: Scalar>(
    process: &QuantileProcess<F>,
    dataset: &Dataset<F>,
    weights: &[F],
) -> Result<(), FitError> {
    let mass: F = weights.iter().copied().sum();
    let bound = F::real(1e-8) * mass;
    let k_count = process.segment_count();
    let stride = (k_count / 24).max(1);
    let mut taus: Vec<F> = (0..k_count)
        .step_by(stride)
        .map(|k| process.breakpoints()[k])
        .collect();
    taus.push(process.breakpoints()[k_count - 1]);
    for tau in taus {
        let r = equation_residual_weighted(process, dataset, weights, tau)?;
        let norm = linalg::norm_inf(&r);
        if norm > bound {
            return Err(FitError::ResidualCheckFailed {
                tau: tau.as_f64(),
                norm: norm.as_f64(),
                bound: bound.as_f64(),
            });
        }
    }
    Ok(())
}

/// Left side minus right side of the estimating integral equation at `tau`,
/// evaluated with the recorded split-weight trace and unit masses.
pub fn equation_residual<F: Scalar>(
    process: &QuantileProcess<F>,
    dataset: &Dataset<F>,
    tau: F,
) -> Result<Vec<F>, FitError> {
    let ones = vec![F::one(); dataset.n()];
    equation_residual_weighted(process, dataset, &ones, tau)
}

/// Weighted variant of [`equation_residual`].
pub fn equation_residual_weighted<F: Scalar>(
    process: &QuantileProcess<F>,
    dataset: &Dataset<F>,
    weights: &[F],
    tau: F,
) -> Result<Vec<F>, FitError> {
    if tau == F::zero() {
        return Ok(vec![F::zero(); dataset.p()]);
    }
    let seg = process.segment_index(tau)?;
    if process.weight_trace().is_empty() {
        return Err(FitError::TraceUnavailable);
    }
    let p = dataset.p();

    // right side: exact per-segment accumulation of the integral
    let mut rhs = vec![F::zero(); p];
    for k in 0..seg {
        let t = &process.weight_trace()[k];
        linalg::axpy(&mut rhs, t.lambda_b, &t.h_hat);
    }
    let (seg_start, _) = process.segment_bounds(seg);
    let lambda_here = (tau - seg_start) / (F::one() - seg_start);
    let t = &process.weight_trace()[seg];
    linalg::axpy(&mut rhs, lambda_here, &t.h_hat);

    // left side: recompute the indicators at the evaluated coefficient
    let beta = process.evaluate(tau)?;
    let gamma_of = |i: usize| -> Option<F> {
        t.gamma
            .iter()
            .find(|&&(j, _)| j == i)
            .map(|&(_, g)| g)
    };
    let w_of = |i: usize| -> Option<F> {
        t.basis
            .iter()
            .position(|&j| j == i)
            .map(|pos| t.w[pos])
            .or_else(|| {
                t.extra_interpolated
                    .iter()
                    .find(|&&(j, _)| j == i)
                    .map(|&(_, w)| w)
            })
    };
    let mut lhs = vec![F::zero(); p];
    for i in 0..dataset.n() {
        if !dataset.delta(i) {
            continue;
        }
        let r = dataset.x(i) - dot(dataset.z(i), beta);
        let tol = F::real(1e-9) * (F::one() + dataset.x(i).abs());
        let phi = if r.abs() <= tol {
            match w_of(i) {
                Some(w0) => {
                    let drift = gamma_of(i).unwrap_or(F::zero());
                    w0 + lambda_here * drift
                }
                None => F::zero(),
            }
        } else if r < F::zero() {
            F::one()
        } else {
            F::zero()
        };
        linalg::axpy(&mut lhs, weights[i] * phi, dataset.z(i));
    }
    Ok(lhs.iter().zip(&rhs).map(|(&l, &r)| l - r).collect())
}

/// Reconstruct the split-value path of observation `i` over the fitted range
/// as a piecewise-linear function of cumulative probability. Continuous for
/// uncensored observations.
pub fn phi_trace<F: Scalar>(
    process: &QuantileProcess<F>,
    dataset: &Dataset<F>,
    i: usize,
) -> Result<PiecewiseLinear<F>, FitError> {
    if i >= dataset.n() {
        return Err(FitError::Data(DataError::IndexOutOfRange(i)));
    }
    if process.weight_trace().is_empty() {
        return Err(FitError::TraceUnavailable);
    }
    let mut knots = Vec::with_capacity(process.segment_count() + 1);
    let mut values = Vec::with_capacity(process.segment_count() + 1);
    let mut carried = F::zero();
    for (k, t) in process.weight_trace().iter().enumerate() {
        let (start, end) = process.segment_bounds(k);
        let beta = &process.coefficients()[k];
        let r = dataset.x(i) - dot(dataset.z(i), beta);
        let tol = F::real(1e-9) * (F::one() + dataset.x(i).abs());
        let pos = t.basis.iter().position(|&j| j == i);
        let (v_start, v_end) = if let Some(pos) = pos {
            let w0 = t.w[pos];
            let drift = t
                .gamma
                .iter()
                .find(|&&(j, _)| j == i)
                .map(|&(_, g)| g)
                .unwrap_or(F::zero());
            let lam_end = (end - start) / (F::one() - start);
            (w0, w0 + lam_end * drift)
        } else if r.abs() <= tol {
            let w = t
                .extra_interpolated
                .iter()
                .find(|&&(j, _)| j == i)
                .map(|&(_, w)| w)
                .unwrap_or(carried);
            (w, w)
        } else if r < F::zero() {
            (F::one(), F::one())
        } else {
            (F::zero(), F::zero())
        };
        knots.push(start);
        values.push(v_start);
        carried = v_end;
        if k + 1 == process.segment_count() {
            knots.push(end);
            values.push(v_end);
        }
    }
    Ok(PiecewiseLinear { knots, values })
}
