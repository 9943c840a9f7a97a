//! Randomized equivalence checks against the independent oracles, plus
//! property tests of the fitted-process invariants.

mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;

use cqreg::oracles::{brute_force_round, brute_force_rq, km_quantile, nelson_aalen_increments};
use cqreg::process::{equation_residual, fit, FitConfig};
use cqreg::solver::{solve_round, RoundInput};
use cqreg::{Dataset64, SegmentFlag};

fn full_range_config() -> FitConfig<f64> {
    FitConfig {
        tau_max: Some(1.0 - 1e-12),
        ..FitConfig::default()
    }
}

#[test]
fn one_sample_fit_equals_product_limit_inverse() {
    let mut rng = rng(0x0ac1);
    for trial in 0..80 {
        let n = 5 + (trial % 40);
        let ties = trial % 3 == 0;
        let rate = 0.3 + 0.7 * (trial as f64 % 7.0) / 7.0;
        let ds = gen_one_sample(&mut rng, n, rate, ties);
        let process = fit(&ds, &full_range_config()).unwrap();
        for _ in 0..200 {
            let tau = rng.gen::<f64>() * process.tau_end().min(1.0 - 1e-9);
            let fitted = process.evaluate(tau).unwrap()[0];
            let km = km_quantile(&ds, None, tau).unwrap();
            assert!(
                (fitted - km).abs() <= 1e-12,
                "trial {trial}: mismatch at tau={tau}: fit {fitted} vs product-limit {km}"
            );
        }
    }
}

#[test]
fn one_sample_breakpoints_match_hazard_increments() {
    let mut rng = rng(0x0ac2);
    for trial in 0..60 {
        let n = 4 + (trial % 30);
        let ties = trial % 2 == 0;
        let ds = gen_one_sample(&mut rng, n, 0.7, ties);
        let process = fit(&ds, &full_range_config()).unwrap();
        // group event rounds by their coefficient value (an event time) and
        // compose the per-round masses within the group
        let mut grouped: Vec<(f64, f64)> = Vec::new();
        for (k, t) in process.weight_trace().iter().enumerate() {
            let has_event = !t.gamma.is_empty();
            if !has_event {
                continue;
            }
            let value = process.coefficients()[k][0];
            match grouped.last_mut() {
                Some((v, surv)) if *v == value => *surv *= 1.0 - t.lambda_b,
                _ => grouped.push((value, 1.0 - t.lambda_b)),
            }
        }
        let na = nelson_aalen_increments(&ds).unwrap();
        assert_eq!(
            grouped.len(),
            na.len(),
            "trial {trial}: event-round groups vs distinct event times"
        );
        for ((val, surv), (t, inc)) in grouped.iter().zip(&na) {
            assert_eq!(val, t, "trial {trial}: event time mismatch");
            assert!(
                ((1.0 - surv) - inc).abs() <= 1e-12,
                "trial {trial}: increment mismatch at {t}: {} vs {}",
                1.0 - surv,
                inc
            );
        }
    }
}

#[test]
fn uncensored_fit_attains_vertex_enumeration_minimum() {
    let mut rng = rng(0x0ac3);
    for trial in 0..40 {
        let p = 1 + trial % 3;
        let n = (p + 3) + (trial % 12);
        let ds = gen_uncensored(&mut rng, n, p);
        let process = fit(&ds, &full_range_config()).unwrap();
        for (k, &tau) in process.breakpoints().iter().enumerate() {
            let beta = &process.coefficients()[k];
            let fitted_obj = kb_objective(&ds, tau, beta);
            let (oracle_obj, _) = brute_force_rq(&ds, tau).unwrap();
            assert!(
                (fitted_obj - oracle_obj).abs() <= 1e-10,
                "trial {trial}: objective gap {} at tau={tau}",
                (fitted_obj - oracle_obj).abs()
            );
        }
    }
}

#[test]
fn rounds_attain_constrained_enumeration_minimum() {
    let mut rng = rng(0x0ac4);
    for trial in 0..50 {
        let p = 1 + trial % 2;
        let n = (p + 3) + (trial % (12 - p - 2));
        let ds = gen_censored_regression(&mut rng, n, p, 0.3);
        let ones = vec![1.0; n];
        let mut phi = vec![0.0; n];
        let min_x = (0..n).map(|i| ds.x(i)).fold(f64::INFINITY, f64::min);
        let mut warm = vec![0.0; p];
        warm[0] = min_x - 1.0;
        let mut tau = 0.0;
        for _round in 0..(10 * n) {
            let input = RoundInput {
                dataset: &ds,
                weights: &ones,
                phi: &phi,
                warm_start: &warm,
                tau,
            };
            let out = solve_round(&input).unwrap();
            let fitted = hinge_objective(&ds, &ones, &out.beta);
            let (oracle, _) = brute_force_round(&input).unwrap();
            assert!(
                (fitted - oracle).abs() <= 1e-10,
                "trial {trial}: round objective gap {} at tau={tau}",
                (fitted - oracle).abs()
            );
            if out.lambda_b >= 1.0 {
                break;
            }
            tau = 1.0 - (1.0 - tau) * (1.0 - out.lambda_b);
            phi = out.phi_next;
            warm = out.beta;
        }
    }
}

#[test]
fn two_sample_fit_combines_group_quantiles() {
    let mut rng = rng(0x0ac5);
    for trial in 0..25 {
        let n_a = 4 + trial % 8;
        let n_b = 4 + (trial / 2) % 8;
        let mut x = Vec::new();
        let mut delta = Vec::new();
        let mut z = Vec::new();
        for _ in 0..n_a {
            x.push(rng.gen::<f64>() * 5.0);
            delta.push(rng.gen::<f64>() < 0.75);
            z.push(vec![1.0, 0.0]);
        }
        for _ in 0..n_b {
            x.push(3.0 + rng.gen::<f64>() * 5.0);
            delta.push(rng.gen::<f64>() < 0.75);
            z.push(vec![1.0, 1.0]);
        }
        if !delta.iter().any(|&d| d) {
            delta[0] = true;
        }
        let ds = Dataset64::from_parts(x.clone(), delta.clone(), z).unwrap();
        let a_idx: Vec<usize> = (0..n_a).collect();
        let b_idx: Vec<usize> = (n_a..n_a + n_b).collect();
        let group = |idx: &[usize]| {
            Dataset64::from_parts(
                idx.iter().map(|&i| x[i]).collect(),
                idx.iter().map(|&i| delta[i]).collect(),
                vec![vec![1.0]; idx.len()],
            )
            .unwrap()
        };
        let ds_a = group(&a_idx);
        let ds_b = group(&b_idx);
        let process = match fit(&ds, &full_range_config()) {
            Ok(p) => p,
            Err(e) => panic!("trial {trial}: fit failed: {e}"),
        };
        for _ in 0..60 {
            let tau = rng.gen::<f64>() * process.tau_end().min(1.0 - 1e-9);
            let beta = process.evaluate(tau).unwrap();
            let qa = km_quantile(&ds_a, None, tau).unwrap();
            let qb = km_quantile(&ds_b, None, tau).unwrap();
            assert!(
                (beta[0] - qa).abs() <= 1e-9,
                "trial {trial}: intercept vs group-A quantile at tau={tau}"
            );
            assert!(
                (beta[0] + beta[1] - qb).abs() <= 1e-9,
                "trial {trial}: sum vs group-B quantile at tau={tau}"
            );
        }
    }
}

#[test]
fn residuals_vanish_on_random_censored_fits() {
    let mut rng = rng(0x0ac6);
    for trial in 0..30 {
        let p = 1 + trial % 4;
        let n = 20 + trial * 5;
        let ds = gen_censored_regression(&mut rng, n, p, 0.3);
        let process = fit(&ds, &full_range_config()).unwrap();
        let bound = 1e-8 * n as f64;
        for &tau in process.breakpoints() {
            let r = equation_residual(&process, &ds, tau).unwrap();
            assert!(inf_norm(&r) <= bound, "trial {trial}: residual at breakpoint {tau}");
        }
        for k in 1..10 {
            let tau = k as f64 / 10.0;
            if tau < process.tau_end() {
                let r = equation_residual(&process, &ds, tau).unwrap();
                assert!(inf_norm(&r) <= bound, "trial {trial}: residual at tau={tau}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn evaluation_is_piecewise_constant(seed in 0u64..5_000, pick in 0.0f64..1.0, frac in 0.0f64..1.0) {
        let mut r = rng(seed);
        let ds = gen_censored_regression(&mut r, 12 + (seed % 20) as usize, 1 + (seed % 3) as usize, 0.25);
        let process = fit(&ds, &FitConfig::default()).unwrap();
        let k = ((process.segment_count() as f64 - 1.0) * pick).round() as usize;
        let (lo, hi) = process.segment_bounds(k);
        let tau1 = lo;
        let tau2 = lo + (hi - lo) * frac * 0.999;
        if tau2 < process.tau_end() {
            prop_assert_eq!(process.evaluate(tau1).unwrap(), process.evaluate(tau2).unwrap());
        }
    }

    #[test]
    fn breakpoints_and_weights_stay_in_range(seed in 0u64..5_000) {
        let mut r = rng(seed);
        let ds = gen_censored_regression(&mut r, 10 + (seed % 25) as usize, 1 + (seed % 3) as usize, 0.35);
        let process = fit(&ds, &FitConfig::default()).unwrap();
        for t in process.weight_trace() {
            prop_assert!(t.lambda_b > 0.0 && t.lambda_b <= 1.0);
            for &w in &t.w {
                prop_assert!((0.0..=1.0).contains(&w));
            }
            for &(_, w) in &t.extra_interpolated {
                prop_assert!((0.0..=1.0).contains(&w));
            }
            prop_assert_eq!(t.basis.len(), ds.p());
        }
    }

    #[test]
    fn trimmed_mean_is_componentwise_bounded(seed in 0u64..5_000, a in 0.0f64..0.6, width in 0.05f64..0.4) {
        let mut r = rng(seed);
        let ds = gen_censored_regression(&mut r, 15 + (seed % 15) as usize, 1 + (seed % 2) as usize, 0.2);
        let process = fit(&ds, &FitConfig::default()).unwrap();
        let tau1 = a * process.tau_end();
        let tau2 = (a + width).min(0.999) * process.tau_end();
        if tau2 > tau1 {
            let m = cqreg::inference::trimmed_mean_effect(&process, tau1, tau2).unwrap();
            for comp in 0..ds.p() {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for k in 0..process.segment_count() {
                    let (s, e) = process.segment_bounds(k);
                    if e > tau1 && s < tau2 {
                        lo = lo.min(process.coefficients()[k][comp]);
                        hi = hi.max(process.coefficients()[k][comp]);
                    }
                }
                prop_assert!(m[comp] >= lo - 1e-12 && m[comp] <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn interpolated_basis_has_full_rank_every_segment() {
    let mut rng = rng(0x0ac7);
    for trial in 0..20 {
        let p = 1 + trial % 4;
        let n = 15 + trial * 3;
        let ds = gen_censored_regression(&mut rng, n, p, 0.3);
        let ones = vec![1.0; n];
        let process = fit(&ds, &full_range_config()).unwrap();
        for (k, t) in process.weight_trace().iter().enumerate() {
            cqreg::verify_segment(
                &ds,
                &ones,
                &process.coefficients()[k],
                &t.basis,
                &t.w,
                &t.gamma,
                &t.extra_interpolated,
                t.lambda_b,
                cqreg::TOL_DUAL,
            )
            .unwrap_or_else(|e| panic!("trial {trial}, segment {k}: {e}"));
        }
        let _ = process.flags().iter().any(|f| *f == SegmentFlag::Nonunique);
    }
}
