//! Independent brute-force references: product-limit and cumulative-hazard
//! estimators, the cadlag quantile inverse, and exhaustive vertex
//! enumeration for the regression-quantile and round minimisations.
//!
//! These are written straight from the definitions and deliberately share no
//! code with the solver they are used to check.

use thiserror::Error;

use crate::model::{Dataset, StepFunction};
use crate::scalar::Scalar;
use crate::solver::RoundInput;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large for enumeration: n={n}, p={p} (limits n<={max_n}, p<={max_p})")]
    TooLarge {
        n: usize,
        p: usize,
        max_n: usize,
        max_p: usize,
    },
    #[error("constraint system is infeasible")]
    Infeasible,
    #[error("probability beyond the estimated support and no convention applies")]
    BeyondSupport,
    #[error("operation requires an intercept-only dataset")]
    CovariatesPresent,
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Product-limit estimate of the distribution function, plus the metadata
/// needed for the cadlag inverse convention at the top.
#[derive(Debug, Clone)]
pub struct KaplanMeier<F: Scalar> {
    /// Estimated distribution function (right-continuous).
    pub cdf: StepFunction<F>,
    /// Largest follow-up value, censored or not.
    pub last_followup: F,
    /// Total estimated mass, i.e. the final value of `cdf`.
    pub mass: F,
}

/// Product-limit estimator for an intercept-only dataset, optionally with
/// positive per-observation masses. Tied events are processed before tied
/// censorings at the same time.
pub fn kaplan_meier<F: Scalar>(
    dataset: &Dataset<F>,
    weights: Option<&[F]>,
) -> Result<KaplanMeier<F>, OracleError> {
    if dataset.p() != 1 {
        return Err(OracleError::CovariatesPresent);
    }
    let n = dataset.n();
    if let Some(w) = weights {
        if w.len() != n {
            return Err(OracleError::Invalid("weight length mismatch".into()));
        }
        if w.iter().any(|&x| x <= F::zero()) {
            return Err(OracleError::Invalid("weights must be positive".into()));
        }
    }
    let mass_of = |i: usize| weights.map_or(F::one(), |w| w[i]);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dataset.x(a).partial_cmp(&dataset.x(b)).unwrap());

    let mut jump_points = Vec::new();
    let mut values = Vec::new();
    let mut surv = F::one();
    let mut k = 0;
    while k < n {
        let t = dataset.x(order[k]);
        let mut dead = F::zero();
        let mut j = k;
        while j < n && dataset.x(order[j]) == t {
            if dataset.delta(order[j]) {
                dead += mass_of(order[j]);
            }
            j += 1;
        }
        if dead > F::zero() {
            let at_risk: F = order[k..].iter().map(|&i| mass_of(i)).sum();
            surv = surv * (F::one() - dead / at_risk);
            jump_points.push(t);
            values.push(F::one() - surv);
        }
        k = j;
    }
    let cdf = StepFunction::new(F::zero(), jump_points, values)
        .map_err(|e| OracleError::Invalid(e.to_string()))?;
    let mass = cdf.last_value();
    let last_followup = dataset.x(*order.last().unwrap());
    Ok(KaplanMeier {
        cdf,
        last_followup,
        mass,
    })
}

/// Cumulative-hazard estimate: increments (events at t) / (at risk at t).
pub fn nelson_aalen<F: Scalar>(dataset: &Dataset<F>) -> Result<StepFunction<F>, OracleError> {
    let incs = nelson_aalen_increments(dataset)?;
    let mut cum = F::zero();
    let mut points = Vec::with_capacity(incs.len());
    let mut values = Vec::with_capacity(incs.len());
    for (t, inc) in incs {
        cum += inc;
        points.push(t);
        values.push(cum);
    }
    StepFunction::new(F::zero(), points, values).map_err(|e| OracleError::Invalid(e.to_string()))
}

/// Hazard increments at each distinct event time.
pub fn nelson_aalen_increments<F: Scalar>(
    dataset: &Dataset<F>,
) -> Result<Vec<(F, F)>, OracleError> {
    if dataset.p() != 1 {
        return Err(OracleError::CovariatesPresent);
    }
    let n = dataset.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dataset.x(a).partial_cmp(&dataset.x(b)).unwrap());
    let mut out = Vec::new();
    let mut k = 0;
    while k < n {
        let t = dataset.x(order[k]);
        let mut dead = 0usize;
        let mut j = k;
        while j < n && dataset.x(order[j]) == t {
            if dataset.delta(order[j]) {
                dead += 1;
            }
            j += 1;
        }
        if dead > 0 {
            let at_risk = n - k;
            out.push((t, F::real(dead as f64) / F::real(at_risk as f64)));
        }
        k = j;
    }
    Ok(out)
}

/// Cadlag inverse of the product-limit estimate: `sup{t: F(t) <= tau}`, with
/// the last-follow-up convention when the estimate never exceeds `tau`.
pub fn km_inverse<F: Scalar>(km: &KaplanMeier<F>, tau: F) -> Result<F, OracleError> {
    if !(tau >= F::zero() && tau < F::one()) {
        return Err(OracleError::Invalid(format!(
            "tau must lie in [0,1), found {tau}"
        )));
    }
    for (t, v) in km.cdf.jump_points().iter().zip(km.cdf.values()) {
        if *v > tau {
            return Ok(*t);
        }
    }
    // The estimate stays at or below tau everywhere: the top of the support.
    Ok(km.last_followup)
}

/// Cadlag inverse over a bare step function, without any top convention.
pub fn step_inverse<F: Scalar>(cdf: &StepFunction<F>, tau: F) -> Result<F, OracleError> {
    if !(tau >= F::zero() && tau < F::one()) {
        return Err(OracleError::Invalid(format!(
            "tau must lie in [0,1), found {tau}"
        )));
    }
    for (t, v) in cdf.jump_points().iter().zip(cdf.values()) {
        if *v > tau {
            return Ok(*t);
        }
    }
    Err(OracleError::BeyondSupport)
}

/// One-sample quantile estimate: product-limit inverse with the convention.
pub fn km_quantile<F: Scalar>(
    dataset: &Dataset<F>,
    weights: Option<&[F]>,
    tau: F,
) -> Result<F, OracleError> {
    let km = kaplan_meier(dataset, weights)?;
    km_inverse(&km, tau)
}

const MAX_RQ_N: usize = 30;
const MAX_RQ_P: usize = 4;
const MAX_ROUND_N: usize = 12;

/// Gaussian elimination with full magnitude pivoting, local to the oracles.
fn gauss_solve<F: Scalar>(mut a: Vec<Vec<F>>, mut rhs: Vec<F>) -> Option<Vec<F>> {
    let m = a.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(F::zero(), |acc, &x| acc.max(x.abs()))
        .max(F::one());
    let tol = F::real(1e-11) * scale;
    let mut perm: Vec<usize> = (0..m).collect();
    for k in 0..m {
        let mut best = (k, k);
        let mut best_val = F::zero();
        for i in k..m {
            for j in k..m {
                if a[i][j].abs() > best_val {
                    best_val = a[i][j].abs();
                    best = (i, j);
                }
            }
        }
        if best_val <= tol {
            return None;
        }
        a.swap(k, best.0);
        rhs.swap(k, best.0);
        for row in a.iter_mut() {
            row.swap(k, best.1);
        }
        perm.swap(k, best.1);
        for i in k + 1..m {
            let f = a[i][k] / a[k][k];
            if f != F::zero() {
                for j in k..m {
                    let akj = a[k][j];
                    a[i][j] = a[i][j] - f * akj;
                }
                let rk = rhs[k];
                rhs[i] = rhs[i] - f * rk;
            }
        }
    }
    let mut y = vec![F::zero(); m];
    for k in (0..m).rev() {
        let mut s = rhs[k];
        for j in k + 1..m {
            s = s - a[k][j] * y[j];
        }
        y[k] = s / a[k][k];
    }
    let mut x = vec![F::zero(); m];
    for k in 0..m {
        x[perm[k]] = y[k];
    }
    Some(x)
}

fn combinations(n: usize, p: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..p).collect();
    if p > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let mut k = p;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if idx[k] != k + n - p {
                break;
            }
            if k == 0 {
                return out;
            }
        }
        idx[k] += 1;
        for j in k + 1..p {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn interpolating_vertex<F: Scalar>(dataset: &Dataset<F>, subset: &[usize]) -> Option<Vec<F>> {
    let a: Vec<Vec<F>> = subset.iter().map(|&i| dataset.z(i).to_vec()).collect();
    let rhs: Vec<F> = subset.iter().map(|&i| dataset.x(i)).collect();
    gauss_solve(a, rhs)
}

/// Exhaustive regression-quantile solver for uncensored data: enumerate all
/// rank-p interpolating subsets and minimise the check objective.
pub fn brute_force_rq<F: Scalar>(
    dataset: &Dataset<F>,
    tau: F,
) -> Result<(F, Vec<F>), OracleError> {
    let (n, p) = (dataset.n(), dataset.p());
    if n > MAX_RQ_N || p > MAX_RQ_P {
        return Err(OracleError::TooLarge {
            n,
            p,
            max_n: MAX_RQ_N,
            max_p: MAX_RQ_P,
        });
    }
    if dataset.iter().any(|o| !o.delta) {
        return Err(OracleError::Invalid(
            "regression-quantile oracle requires uncensored data".into(),
        ));
    }
    let mut best: Option<(F, Vec<F>)> = None;
    for subset in combinations(n, p) {
        let Some(b) = interpolating_vertex(dataset, &subset) else {
            continue;
        };
        let mut obj = F::zero();
        for i in 0..n {
            let r = dataset.x(i) - crate::linalg::dot(dataset.z(i), &b);
            let neg = if r < F::zero() { -r } else { F::zero() };
            obj += neg + tau * r;
        }
        if best.as_ref().is_none_or(|(v, _)| obj < *v) {
            best = Some((obj, b));
        }
    }
    best.ok_or(OracleError::Infeasible)
}

/// Exhaustive solver for one round: enumerate rank-p interpolating vertices
/// honouring the round constraints, minimise the weighted hinge objective.
pub fn brute_force_round<F: Scalar>(input: &RoundInput<'_, F>) -> Result<(F, Vec<F>), OracleError> {
    let dataset = input.dataset;
    let (n, p) = (dataset.n(), dataset.p());
    if n > MAX_ROUND_N {
        return Err(OracleError::TooLarge {
            n,
            p,
            max_n: MAX_ROUND_N,
            max_p: MAX_RQ_P,
        });
    }
    let feas_tol = F::real(1e-9) * dataset.x_scale();
    let mut best: Option<(F, Vec<F>)> = None;
    for subset in combinations(n, p) {
        let Some(b) = interpolating_vertex(dataset, &subset) else {
            continue;
        };
        let mut feasible = true;
        for i in 0..n {
            if !dataset.delta(i) {
                continue;
            }
            let r = dataset.x(i) - crate::linalg::dot(dataset.z(i), &b);
            let phi = input.phi[i];
            if phi == F::one() {
                // below-set constraint: x <= z'b
                if r > feas_tol {
                    feasible = false;
                    break;
                }
            } else if phi == F::zero() {
                // above-set constraint: x >= z'b
                if r < -feas_tol {
                    feasible = false;
                    break;
                }
            } else {
                // interpolation constraint
                if r.abs() > feas_tol {
                    feasible = false;
                    break;
                }
            }
        }
        if !feasible {
            continue;
        }
        let mut obj = F::zero();
        for i in 0..n {
            let r = dataset.x(i) - crate::linalg::dot(dataset.z(i), &b);
            if r > F::zero() {
                obj += input.weights[i] * r;
            }
        }
        if best.as_ref().is_none_or(|(v, _)| obj < *v) {
            best = Some((obj, b));
        }
    }
    best.ok_or(OracleError::Infeasible)
}
