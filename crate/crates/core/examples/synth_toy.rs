//! Risk-aware and scenario min-max synthesis on a one-state plant with a
//! static gain: `x' = (d + k) x + w`, soft `|w -> x|^2`, hard
//! `|w -> u/2|^2 <= 1`. With `d` fixed at 0 the optimum is `k = -8`.

use cvarsynth::lfr::{ChannelTable, ControllerTemplate, DeltaStructure, LfrModel};
use cvarsynth::loss::{LossSpec, NormKind};
use cvarsynth::lti::{Mat, StateSpace};
use cvarsynth::sampling::{DistributionSpec, ParamDistribution};
use cvarsynth::synth::{solve_cvar, solve_minmax, Mode, ProblemSpec, Requirement, Role, ScenarioConfig, SolverOptions};

fn requirement(name: &str, weight: f64, role: Role) -> cvarsynth::Result<Requirement> {
    let loss = LossSpec::new(NormKind::H2, 2, StateSpace::static_gain(Mat::from_element(1, 1, weight)), "w", name)?;
    Ok(Requirement { name: name.into(), loss, role, bound: 1.0, beta: 0.95 })
}

fn main() -> cvarsynth::Result<()> {
    // inputs [q, u, w], outputs [p, y, zx, zu]
    let mut d = Mat::zeros(4, 3);
    d[(3, 1)] = 1.0;
    let m = StateSpace::new(
        Mat::zeros(1, 1),
        Mat::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
        Mat::from_column_slice(4, 1, &[1.0, 1.0, 1.0, 0.0]),
        d,
    )?;
    let channels = ChannelTable::consecutive(&[("w", 1)], &[("zx", 1), ("zu", 1)]);
    let model = LfrModel::new(m, DeltaStructure::new(vec![("d", 1)])?, 1, 1, channels)?;

    let dist = DistributionSpec::new(vec![ParamDistribution::gaussian("d", 0.0, 0.2)])?;
    let mut scenarios = ScenarioConfig::new(dist, None, 3);
    scenarios.n_schedule = vec![100, 500];
    let spec = ProblemSpec {
        model,
        template: ControllerTemplate::full_order(0, 1, 1, true),
        requirements: vec![requirement("zx", 1.0, Role::Soft)?, requirement("zu", 0.5, Role::Hard)?],
        mode: Mode::Cvar,
        scenarios,
        options: SolverOptions::default(),
        k0: Some(vec![-1.0]),
    };

    for (label, r) in [("cvar", solve_cvar(&spec, &[-1.0])?), ("minmax", solve_minmax(&spec, &[-1.0])?)] {
        println!(
            "{label}: {:?} after {} iterations on N = {}, k = {:.5}",
            r.status, r.iterations, r.final_n, r.k_star[0]
        );
        for (name, e) in r.names.iter().zip(&r.estimates) {
            println!("  {name}: var {:.5} cvar {:.5} worst {:.5}", e.var, e.cvar, e.worst_in_sample);
        }
    }
    Ok(())
}
