//! Shared generators and check objectives for the integration suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cqreg::Dataset64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Intercept-only censored sample. Event indicators are Bernoulli with the
/// given rate; `ties` draws times from a coarse grid so repeats occur.
pub fn gen_one_sample(rng: &mut ChaCha8Rng, n: usize, event_rate: f64, ties: bool) -> Dataset64 {
    let mut x = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    for _ in 0..n {
        let t = if ties {
            let grid = 1 + rng.gen_range(0..(2 * n / 3 + 2));
            grid as f64 * 0.25
        } else {
            -(1.0 - rng.gen::<f64>()).ln() * 2.0
        };
        x.push(t);
        delta.push(rng.gen::<f64>() < event_rate);
    }
    if !delta.iter().any(|&d| d) {
        delta[0] = true;
    }
    Dataset64::from_parts(x, delta, vec![vec![1.0]; n]).unwrap()
}

/// Random regression design with intercept plus `p - 1` covariates (a mix of
/// binary and continuous), linear signal, smooth noise and independent
/// uniform censoring tuned to land near the requested censoring share.
pub fn gen_censored_regression(
    rng: &mut ChaCha8Rng,
    n: usize,
    p: usize,
    censor_share: f64,
) -> Dataset64 {
    let mut x = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = vec![1.0];
        for j in 1..p {
            if j % 2 == 1 {
                row.push(rng.gen::<f64>());
            } else {
                row.push(if rng.gen::<f64>() < 0.5 { 1.0 } else { 0.0 });
            }
        }
        let signal: f64 = row
            .iter()
            .enumerate()
            .map(|(j, &v)| v * 0.5 / (j + 1) as f64)
            .sum();
        let noise = (-(1.0 - rng.gen::<f64>()).ln()).ln();
        let t = signal + noise;
        let c = if censor_share > 0.0 {
            // wide uniform band around the bulk of t
            -2.5 + 6.0 * rng.gen::<f64>() / censor_share.max(0.15)
        } else {
            f64::INFINITY
        };
        x.push(t.min(c));
        delta.push(t <= c);
        z.push(row);
    }
    if !delta.iter().any(|&d| d) {
        delta[0] = true;
    }
    Dataset64::from_parts(x, delta, z).unwrap()
}

pub fn gen_uncensored(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Dataset64 {
    gen_censored_regression(rng, n, p, 0.0)
}

/// Weighted hinge objective of one round.
pub fn hinge_objective(ds: &Dataset64, weights: &[f64], beta: &[f64]) -> f64 {
    (0..ds.n())
        .map(|i| {
            let r = ds.x(i) - dot(ds.z(i), beta);
            if r > 0.0 {
                weights[i] * r
            } else {
                0.0
            }
        })
        .sum()
}

/// Uncensored regression-quantile check objective.
pub fn kb_objective(ds: &Dataset64, tau: f64, beta: &[f64]) -> f64 {
    (0..ds.n())
        .map(|i| {
            let r = ds.x(i) - dot(ds.z(i), beta);
            let neg = if r < 0.0 { -r } else { 0.0 };
            neg + tau * r
        })
        .sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
