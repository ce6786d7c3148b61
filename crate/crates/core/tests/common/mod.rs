#![allow(dead_code)]

use cvarsynth::lfr::{ChannelTable, ControllerTemplate, DeltaStructure, LfrModel};
use cvarsynth::loss::{LossSpec, NormKind};
use cvarsynth::lti::{Mat, StateSpace};
use cvarsynth::sampling::{DistributionSpec, ParamDistribution};
use cvarsynth::synth::{Mode, ProblemSpec, Requirement, Role, ScenarioConfig, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

/// Random matrix shifted so that its spectral abscissa is about `-margin`.
pub fn random_stable(rng: &mut ChaCha8Rng, n: usize, margin: f64) -> Mat {
    let mut a = random_mat(rng, n, n, 1.0);
    let abscissa = cvarsynth::lti::spectrum_of(&a).unwrap().max_real_part;
    for i in 0..n {
        a[(i, i)] -= abscissa + margin;
    }
    a
}

pub struct RandomLfr {
    pub model: LfrModel,
    pub template: ControllerTemplate,
    pub k: Vec<f64>,
    pub sample: Vec<f64>,
}

/// Random LFR with two uncertain parameters (one repeated), a controller
/// of order `nk`, channels `w` (2 wide) and `z` (2 wide).
///
/// With `strictly_proper` the `w -> z` channel has no feedthrough for any
/// controller of the template (the template then has no `D_K`).
pub fn random_lfr(rng: &mut ChaCha8Rng, n: usize, nk: usize, strictly_proper: bool) -> RandomLfr {
    let delta = DeltaStructure::new(vec![("a", 2), ("b", 1)]).unwrap();
    let nd = 3;
    let (nu, ny, nw, nz) = (1, 2, 2, 2);
    loop {
        let a = random_stable(rng, n, 0.5);
        let b = random_mat(rng, n, nd + nu + nw, 1.0);
        let c = random_mat(rng, nd + ny + nz, n, 1.0);
        let mut d = random_mat(rng, nd + ny + nz, nd + nu + nw, 0.2);
        if strictly_proper {
            // no direct path into z from anything but through states
            for j in 0..nd + nu + nw {
                for i in nd + ny..nd + ny + nz {
                    d[(i, j)] = 0.0;
                }
            }
            for i in 0..nd + ny {
                for j in nd + nu..nd + nu + nw {
                    d[(i, j)] = 0.0;
                }
            }
        }
        let m = StateSpace::new(a, b, c, d).unwrap();
        let channels = ChannelTable::consecutive(&[("w", nw)], &[("z", nz)]);
        let model = LfrModel::new(m, delta.clone(), nu, ny, channels).unwrap();
        let template = ControllerTemplate::full_order(nk, ny, nu, !strictly_proper);
        let mut k: Vec<f64> = (0..template.dim_k()).map(|_| 0.3 * rng.random_range(-1.0..1.0)).collect();
        // stable controller dynamics
        for i in 0..nk {
            k[i * nk + i] -= 1.0;
        }
        let sample = vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        match cvarsynth::loss::closed_loop_abscissa(&model, &template, &k, &sample) {
            Ok(x) if x < -0.05 => return RandomLfr { model, template, k, sample },
            _ => continue,
        }
    }
}

/// Unit vector with random direction.
pub fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// `x' = (a0 + d) x + bu u + w`, `y = x`, outputs `zx = x` and `zu = u`.
/// Static gain `u = k y`, so the closed-loop pole is `a0 + d + bu k`.
pub fn scalar_plant(a0: f64, bu: f64) -> (LfrModel, ControllerTemplate) {
    // inputs [q, u, w], outputs [p, y, zx, zu]
    let a = Mat::from_element(1, 1, a0);
    let b = Mat::from_row_slice(1, 3, &[1.0, bu, 1.0]);
    let c = Mat::from_column_slice(4, 1, &[1.0, 1.0, 1.0, 0.0]);
    let mut d = Mat::zeros(4, 3);
    d[(3, 1)] = 1.0;
    let m = StateSpace::new(a, b, c, d).unwrap();
    let channels = ChannelTable::consecutive(&[("w", 1)], &[("zx", 1), ("zu", 1)]);
    let model = LfrModel::new(m, DeltaStructure::new(vec![("d", 1)]).unwrap(), 1, 1, channels).unwrap();
    (model, ControllerTemplate::full_order(0, 1, 1, true))
}

pub fn h2sq(w: f64, z: &str, role: Role, bound: f64) -> Requirement {
    let loss = LossSpec::new(NormKind::H2, 2, StateSpace::static_gain(Mat::from_element(1, 1, w)), "w", z).unwrap();
    Requirement { name: z.to_string(), loss, role, bound, beta: 0.95 }
}

/// Soft `1 / (2 s)` on `zx`, hard `k^2 / (8 s)` on `zu` with `s = -(a0 + d + k)`.
/// At `d = 0`, `a0 = 0` the optimum is `k = -8`, soft `1/16`.
pub fn tradeoff_problem(scenarios: ScenarioConfig) -> ProblemSpec {
    let (model, template) = scalar_plant(0.0, 1.0);
    ProblemSpec {
        model,
        template,
        requirements: vec![h2sq(1.0, "zx", Role::Soft, 1.0), h2sq(0.5, "zu", Role::Hard, 1.0)],
        mode: Mode::Cvar,
        scenarios,
        options: SolverOptions::default(),
        k0: None,
    }
}

pub fn fixed(samples: Vec<Vec<f64>>) -> ScenarioConfig {
    ScenarioConfig::fixed(vec!["d".into()], samples).unwrap()
}

pub fn gaussian(sd: f64, schedule: Vec<usize>) -> ScenarioConfig {
    let dist = DistributionSpec::new(vec![ParamDistribution::gaussian("d", 0.0, sd)]).unwrap();
    let mut c = ScenarioConfig::new(dist, None, 11);
    c.n_schedule = schedule;
    c
}
