use cvarsynth::bench::*;
use cvarsynth::cvar::batch_eval_many;
use cvarsynth::lfr::instantiate_delta;
use cvarsynth::lti::spectral_abscissa;
use cvarsynth::sampling::draw_samples;

/// Physical parameters read back from an instantiated plant:
/// inertia, then (omega, zeta, modal gain) per flexible mode.
fn physical(cfg: &BenchConfig, delta: &[f64]) -> Vec<f64> {
    let model = build_model(cfg).unwrap();
    let p = instantiate_delta(&model, delta).unwrap();
    let torque = cfg.n_states() - 1;
    let mut out = vec![1.0 / p.a[(1, torque)]];
    for i in 0..cfg.modes.len() {
        let (q, qd) = (2 + 2 * i, 3 + 2 * i);
        let w = (-p.a[(qd, q)]).sqrt();
        out.extend([w, -p.a[(qd, qd)] / (2.0 * w), p.a[(qd, torque)]]);
    }
    out
}

#[test]
fn physical_parameters_are_affine_in_each_delta() {
    let cfg = BenchConfig::default();
    let base = [0.1, -0.2, 0.3, 0.05, -0.15, 0.4];
    let h = 0.5;
    for i in 0..base.len() {
        let at = |s: f64| {
            let mut d = base.to_vec();
            d[i] += s;
            physical(&cfg, &d)
        };
        let (lo, mid, hi) = (at(-h), at(0.0), at(h));
        for j in 0..mid.len() {
            let second = lo[j] - 2.0 * mid[j] + hi[j];
            assert!(second.abs() <= 1e-12 * mid[j].abs(), "delta {i}, parameter {j}: {second:e}");
        }
    }
    // the map itself: +1 on each normalized parameter
    let nominal = physical(&cfg, &[0.0; 6]);
    let mut d = [0.0; 6];
    d[1] = 1.0;
    assert!((physical(&cfg, &d)[1] - 1.2 * nominal[1]).abs() < 1e-12);
    d = [0.0; 6];
    d[2] = 1.0;
    assert!((physical(&cfg, &d)[2] - 1.5 * nominal[2]).abs() < 1e-12);
    d = [0.0; 6];
    d[5] = 1.0;
    assert!((physical(&cfg, &d)[3] - 1.25 * nominal[3]).abs() < 1e-15);
}

#[test]
fn dimensions_match_configuration() {
    for nm in 1..=3 {
        let mut cfg = BenchConfig::default();
        cfg.modes.truncate(nm.min(2));
        if nm == 3 {
            cfg.modes.push(ModeConfig { omega: 6.0, zeta: 0.01, gain: 1e-3 });
        }
        let (model, template, spec) = build_benchmark(&cfg).unwrap();
        assert_eq!(model.m.a.nrows(), 2 + 2 * nm + 1);
        assert_eq!(model.delta.n_params(), 2 * nm + 2);
        assert_eq!(cfg.param_names().len(), model.delta.n_params());
        assert_eq!(template.order(), 4);
        assert_eq!(spec.requirements.len(), 3);
    }
}

#[test]
fn reference_controller_is_robust_on_most_samples() {
    let cfg = BenchConfig::default();
    let (model, template, spec) = build_benchmark(&cfg).unwrap();
    let k0 = reference_controller(&cfg).unwrap();
    let set = draw_samples(&cfg.distributions(), cfg.constraint().as_ref(), 100, cfg.seed).unwrap();
    let stable = set
        .samples
        .iter()
        .filter(|d| {
            let cl = model.closed_loop(&template, &k0, d, false).unwrap();
            spectral_abscissa(&cl.sys).unwrap().max_real_part < 0.0
        })
        .count();
    assert!(stable >= 95, "{stable} of 100");
    let batches = batch_eval_many(&model, &spec.specs(), &template, &k0, &set.samples, false).unwrap();
    for b in &batches {
        let finite = b.values.iter().filter(|v| v.is_finite()).count();
        assert!(finite >= 95, "{finite} finite losses");
    }
    // weighted sensitivity at the nominal point
    let nominal = batch_eval_many(&model, &spec.specs(), &template, &k0, &[vec![0.0; 6]], false).unwrap();
    assert!(nominal.iter().all(|b| b.values[0].is_finite()));
}

#[test]
fn problem_uses_declared_weights_and_risk_level() {
    let (_, _, spec) = build_benchmark(&BenchConfig::default()).unwrap();
    assert!(spec.requirements.iter().all(|r| r.beta == 0.95));
    let w: Vec<_> = spec.requirements.iter().map(|r| r.loss.weight.d[(0, 0)]).collect();
    assert_eq!(w[0], 1.0 / 200.0);
    assert_eq!(w[1], 0.5);
    // W3 at DC is 1 / 0.02, at high frequency 1/2
    let w3 = bandwidth_weight();
    let dc = w3.d[(0, 0)] - (w3.c.clone() * w3.a.clone().try_inverse().unwrap() * w3.b.clone())[(0, 0)];
    assert!((dc - 50.0).abs() < 1e-9);
    assert_eq!(w3.d[(0, 0)], 0.5);
}
