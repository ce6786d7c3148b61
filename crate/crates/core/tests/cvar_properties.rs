mod common;

use cvarsynth::cvar::{empirical_estimates, minimize_alpha, saa_objective, saa_subgradient, LossBatch};
use proptest::prelude::*;
use rand::Rng;

/// Minimum of the objective over breakpoints and midpoints, and the left
/// most breakpoint attaining it.
pub fn brute_force(values: &[f64], beta: f64) -> (f64, f64) {
    let b = LossBatch::from_values(values.to_vec());
    let mut pts = values.to_vec();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut cands: Vec<f64> = pts.clone();
    cands.extend(pts.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let best = cands.iter().map(|&a| saa_objective(&b, beta, a).unwrap()).fold(f64::INFINITY, f64::min);
    let left = pts
        .iter()
        .copied()
        // flat segments evaluate equal only up to rounding
        .find(|&a| saa_objective(&b, beta, a).unwrap() <= best + 1e-12 * best.abs())
        .unwrap();
    (left, best)
}

#[test]
fn minimize_alpha_matches_scan() {
    let mut g = common::rng(31);
    for trial in 0..1000 {
        let n = g.random_range(1..300);
        let ties = trial % 3 == 0;
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let x: f64 = g.random_range(0.0..10.0);
                if ties {
                    x.round()
                } else {
                    x
                }
            })
            .collect();
        let beta = [0.5, 0.9, 0.95, 0.99, g.random_range(0.01..0.99)][trial % 5];
        let (alpha, cvar) = minimize_alpha(&LossBatch::from_values(values.clone()), beta).unwrap();
        let (left, best) = brute_force(&values, beta);
        assert_eq!(cvar, best, "trial {trial}");
        assert_eq!(alpha, left, "trial {trial}");
    }
}

#[test]
fn standard_normal_tail() {
    let mut g = common::rng(32);
    let values: Vec<f64> =
        (0..1_000_000).map(|_| cvarsynth::sampling::normal_quantile(g.random_range(0.0..1.0f64).max(1e-300))).collect();
    let (_, cvar) = minimize_alpha(&LossBatch::from_values(values), 0.95).unwrap();
    assert!((cvar - 2.06271).abs() <= 0.02, "{cvar}");
}

#[test]
fn subgradient_matches_differences() {
    let mut g = common::rng(33);
    for _ in 0..20 {
        let n = 200;
        let dim = 3;
        // L_i(k) = a_i . k + c_i, linear in k so the only kinks are in alpha
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| g.random_range(-1.0..1.0)).collect()).collect();
        let c: Vec<f64> = (0..n).map(|_| g.random_range(0.0..5.0)).collect();
        let k: Vec<f64> = (0..dim).map(|_| g.random_range(-1.0..1.0)).collect();
        let batch_at = |k: &[f64]| {
            let values = (0..n).map(|i| c[i] + a[i].iter().zip(k).map(|(x, y)| x * y).sum::<f64>()).collect();
            let mut b = LossBatch::from_values(values);
            b.grads = Some(a.iter().cloned().map(Some).collect());
            b
        };
        let b0 = batch_at(&k);
        let alpha = g.random_range(1.0..4.0);
        let sg = saa_subgradient(&b0, 0.9, alpha).unwrap();
        assert_eq!(sg.tie_count, 0);
        let h = 1e-6;
        let fa =
            (saa_objective(&b0, 0.9, alpha + h).unwrap() - saa_objective(&b0, 0.9, alpha - h).unwrap()) / (2.0 * h);
        assert!((fa - sg.d_alpha).abs() <= 1e-5 * sg.d_alpha.abs().max(1.0), "{fa} vs {}", sg.d_alpha);
        for j in 0..dim {
            let mut kp = k.clone();
            let mut km = k.clone();
            kp[j] += h;
            km[j] -= h;
            let fd = (saa_objective(&batch_at(&kp), 0.9, alpha).unwrap()
                - saa_objective(&batch_at(&km), 0.9, alpha).unwrap())
                / (2.0 * h);
            assert!((fd - sg.d_k[j]).abs() <= 1e-5 * sg.d_k[j].abs().max(1e-3), "{fd} vs {}", sg.d_k[j]);
        }
    }
}

fn batch_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, 1..200)
}

proptest! {
    #[test]
    fn objective_is_convex_in_alpha(v in batch_strategy(), a1 in -150.0..150.0f64, a2 in -150.0..150.0f64, beta in 0.01..0.99f64) {
        let b = LossBatch::from_values(v);
        let f = |a: f64| saa_objective(&b, beta, a).unwrap();
        let mid = f(0.5 * (a1 + a2));
        prop_assert!(mid <= 0.5 * (f(a1) + f(a2)) + 1e-12 * (1.0 + mid.abs()));
    }

    #[test]
    fn cvar_monotone_in_beta(v in batch_strategy(), b1 in 0.01..0.99f64, b2 in 0.01..0.99f64) {
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let b = LossBatch::from_values(v);
        let c1 = minimize_alpha(&b, lo).unwrap().1;
        let c2 = minimize_alpha(&b, hi).unwrap().1;
        prop_assert!(c1 <= c2 + 1e-12 * (1.0 + c2.abs()));
    }

    #[test]
    fn estimates_are_ordered(v in batch_strategy(), beta in 0.01..0.99f64) {
        let e = empirical_estimates(&LossBatch::from_values(v), beta, 0.0).unwrap();
        let tol = 1e-12 * (1.0 + e.worst_in_sample.abs());
        prop_assert!(e.var <= e.cvar + tol);
        prop_assert!(e.cvar <= e.worst_in_sample + tol);
        prop_assert!(e.mean <= e.cvar + tol);
    }
}
