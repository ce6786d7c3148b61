//! Single-axis flexible spacecraft benchmark.
//!
//! Hub angle `theta` driven by a torque `T` from a first-order actuator,
//! with flexible appendage modes in parallel modal form:
//!
//! ```text
//! J theta_r'' = T
//! q_i'' + 2 zeta_i omega_i q_i' + omega_i^2 q_i = b_i (1 + r_kappa kappa) T
//! theta = theta_r + sum q_i
//! tau_a T' = u_K + s - T
//! ```
//!
//! Measurements are `y = [r - theta - s_1 n_1, -(theta' + s_2 n_2)]`; the
//! controller command is `u_K = K y`. Exogenous inputs are the noise `n`
//! (2), the reference `r` and an input disturbance `s`; outputs are the
//! actuator input `u = u_K + s` and the tracking error `e = r - theta`.
//!
//! Physical parameters are `J = J0 (1 + r_J d_J)`, `omega_i = omega_i0 (1 +
//! r_w d_wi)`, `zeta_i = zeta_i0 (1 + r_z d_zi)` and the modal coupling
//! factor `1 + r_kappa kappa`. The uncertainty blocks are ordered
//! `[J, omega_1 (x2), zeta_1, ..., omega_m (x2), zeta_m, kappa]`: the
//! frequency enters through the stiffness and the damping products and
//! needs two repetitions, `1/J` is a one-block feedback loop, damping and
//! coupling enter affinely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfr::{ChannelTable, ControllerTemplate, DeltaStructure, LfrModel};
use crate::loss::{LossSpec, NormKind};
use crate::lti::{Mat, StateSpace};
use crate::sampling::{ConstraintExpr, DistributionSpec, ParamDistribution};
use crate::synth::{Mode, ProblemSpec, Requirement, Role, ScenarioConfig, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeConfig {
    /// Natural frequency (rad/s).
    pub omega: f64,
    pub zeta: f64,
    /// Modal input gain per unit torque.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub inertia: f64,
    pub modes: Vec<ModeConfig>,
    /// Relative spread at a normalized parameter of 1.
    pub inertia_range: f64,
    pub omega_range: f64,
    pub zeta_range: f64,
    pub coupling_range: f64,
    pub actuator_tau: f64,
    /// Standard deviation of the angle and rate measurement noise.
    pub noise: [f64; 2],
    /// Standard deviation of the normalized Gaussian parameters.
    pub sigma: f64,
    /// `d_w1^2 + d_z1^2 <= constraint_radius2`; `None` disables it.
    pub constraint_radius2: Option<f64>,
    pub controller_order: usize,
    /// Decay rate (rad/s) every sampled loop must exceed during synthesis.
    /// A controller zero at the origin cancels the rigid-body pole in all
    /// three channels, so no requirement sees that mode drift to the axis.
    pub min_decay: f64,
    /// Iteration cap of each synthesis stage.
    pub max_iter: usize,
    pub seed: u64,
    /// Natural frequency and damping of the rigid-body PD design behind
    /// the reference controller, and the corner of its roll-off.
    pub reference_wn: f64,
    pub reference_zeta: f64,
    pub reference_rolloff: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            inertia: 100.0,
            modes: vec![
                ModeConfig { omega: 1.2, zeta: 0.02, gain: 0.3 / 100.0 },
                ModeConfig { omega: 3.5, zeta: 0.01, gain: 0.2 / 100.0 },
            ],
            inertia_range: 0.3,
            omega_range: 0.2,
            zeta_range: 0.5,
            coupling_range: 0.25,
            actuator_tau: 0.2,
            noise: [1.0, 0.1],
            sigma: 1.0 / 3.0,
            constraint_radius2: Some(2.25),
            controller_order: 4,
            min_decay: 0.005,
            max_iter: 60,
            seed: 7,
            reference_wn: 0.12,
            reference_zeta: 0.7,
            reference_rolloff: 4.0,
        }
    }
}

impl BenchConfig {
    pub fn n_flex_modes(&self) -> usize {
        self.modes.len()
    }

    /// Parameter names in sampling order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["J".to_string()];
        for i in 1..=self.modes.len() {
            names.push(format!("omega{i}"));
            names.push(format!("zeta{i}"));
        }
        names.push("kappa".into());
        names
    }

    /// Plant states, without weight filters.
    pub fn n_states(&self) -> usize {
        2 + 2 * self.modes.len() + 1
    }

    /// Positivity of every physical parameter for normalized Gaussians in
    /// `[-3 sigma, 3 sigma]` and the uniform one in `[-1, 1]`.
    pub fn validate(&self) -> Result<()> {
        let spread = 3.0 * self.sigma;
        let check = |field: &str, ok: bool, what: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::format(field, what))
            }
        };
        check("sigma", self.sigma > 0.0 && self.sigma.is_finite(), format!("{} is not positive", self.sigma))?;
        check("max_iter", self.max_iter > 0, "must be positive".to_string())?;
        check(
            "min_decay",
            self.min_decay > 0.0 && self.min_decay.is_finite(),
            format!("{} is not positive", self.min_decay),
        )?;
        check("inertia", self.inertia > 0.0, format!("{} is not positive", self.inertia))?;
        check(
            "inertia_range",
            self.inertia_range >= 0.0 && self.inertia_range * spread < 1.0,
            "inertia turns nonpositive within 3 sigma".into(),
        )?;
        check(
            "omega_range",
            self.omega_range >= 0.0 && self.omega_range * spread < 1.0,
            "mode frequency turns nonpositive within 3 sigma".into(),
        )?;
        check(
            "zeta_range",
            self.zeta_range >= 0.0 && self.zeta_range * spread < 1.0,
            "damping turns nonpositive within 3 sigma".into(),
        )?;
        check(
            "coupling_range",
            (0.0..1.0).contains(&self.coupling_range),
            "coupling turns nonpositive on [-1, 1]".into(),
        )?;
        check("actuator_tau", self.actuator_tau > 0.0, format!("{} is not positive", self.actuator_tau))?;
        check("noise", self.noise.iter().all(|x| *x > 0.0), "noise levels must be positive".into())?;
        check("modes", !self.modes.is_empty(), "at least one flexible mode".into())?;
        for (i, m) in self.modes.iter().enumerate() {
            check(
                &format!("modes[{i}]"),
                m.omega > 0.0 && m.zeta > 0.0 && m.gain > 0.0,
                "frequency, damping and gain must be positive".into(),
            )?;
        }
        check("controller_order", self.controller_order >= 4, "the reference controller needs order >= 4".into())?;
        check(
            "reference",
            self.reference_wn > 0.0 && self.reference_zeta > 0.0 && self.reference_rolloff > 0.0,
            "reference design parameters must be positive".into(),
        )?;
        if let Some(r2) = self.constraint_radius2 {
            check("constraint_radius2", r2 > 0.0, format!("{r2} is not positive"))?;
        }
        Ok(())
    }

    pub fn distributions(&self) -> DistributionSpec {
        let names = self.param_names();
        let last = names.len() - 1;
        let params = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if i == last {
                    ParamDistribution::uniform(n, -1.0, 1.0)
                } else {
                    ParamDistribution::gaussian(n, 0.0, self.sigma)
                }
            })
            .collect();
        DistributionSpec { params }
    }

    pub fn constraint(&self) -> Option<ConstraintExpr> {
        self.constraint_radius2.map(|r2| ConstraintExpr::Quadratic {
            terms: vec![(1, 1, 1.0), (2, 2, 1.0)],
            linear: vec![],
            constant: -r2,
        })
    }
}

/// Coefficient system with ports `(u_delta, u_K, [n1, n2, r, s]) ->
/// (y_delta, [y_angle, y_rate], [u, e])`.
pub fn build_model(cfg: &BenchConfig) -> Result<LfrModel> {
    cfg.validate()?;
    let nm = cfg.modes.len();
    let nd = 3 * nm + 2;
    let nx = cfg.n_states();
    let (n_in, n_out) = (nd + 1 + 4, nd + 2 + 2);
    let mut a = Mat::zeros(nx, nx);
    let mut b = Mat::zeros(nx, n_in);
    let mut c = Mat::zeros(n_out, nx);
    let mut d = Mat::zeros(n_out, n_in);

    // ports
    let u_j = 0;
    let u_kappa = nd - 1;
    let u_k = nd;
    let (w_n1, w_n2, w_r, w_s) = (nd + 1, nd + 2, nd + 3, nd + 4);
    let (y_angle, y_rate, z_u, z_e) = (nd, nd + 1, nd + 2, nd + 3);
    // states
    let (th, om) = (0, 1);
    let torque = nx - 1;

    let (j0, tau) = (cfg.inertia, cfg.actuator_tau);
    a[(torque, torque)] = -1.0 / tau;
    b[(torque, u_k)] = 1.0 / tau;
    b[(torque, w_s)] = 1.0 / tau;

    a[(th, om)] = 1.0;
    a[(om, torque)] = 1.0 / j0;
    b[(om, u_j)] = -1.0;
    c[(u_j, torque)] = cfg.inertia_range / j0;
    d[(u_j, u_j)] = -cfg.inertia_range;

    c[(u_kappa, torque)] = cfg.coupling_range;

    let (rw, rz) = (cfg.omega_range, cfg.zeta_range);
    for (i, mode) in cfg.modes.iter().enumerate() {
        let (q, qd) = (2 + 2 * i, 3 + 2 * i);
        let (u_wa, u_wb, u_z) = (1 + 3 * i, 2 + 3 * i, 3 + 3 * i);
        let (w0, z0, g) = (mode.omega, mode.zeta, mode.gain);
        a[(q, qd)] = 1.0;
        // inner = w0 q + 2 z0 qd + u_wa + u_z;  qd' = -w0 inner - u_wb + g (T + u_kappa)
        a[(qd, q)] = -w0 * w0;
        a[(qd, qd)] = -2.0 * z0 * w0;
        a[(qd, torque)] = g;
        b[(qd, u_wa)] = -w0;
        b[(qd, u_z)] = -w0;
        b[(qd, u_wb)] = -1.0;
        b[(qd, u_kappa)] = g;
        c[(u_wa, q)] = rw * w0;
        c[(u_z, qd)] = 2.0 * z0 * rz;
        c[(u_wb, q)] = rw * w0 * w0;
        c[(u_wb, qd)] = rw * w0 * 2.0 * z0;
        d[(u_wb, u_wa)] = rw * w0;
        d[(u_wb, u_z)] = rw * w0;

        c[(y_angle, q)] = -1.0;
        c[(y_rate, qd)] = -1.0;
        c[(z_e, q)] = -1.0;
    }

    c[(y_angle, th)] = -1.0;
    d[(y_angle, w_r)] = 1.0;
    d[(y_angle, w_n1)] = -cfg.noise[0];
    c[(y_rate, om)] = -1.0;
    d[(y_rate, w_n2)] = -cfg.noise[1];
    d[(z_u, u_k)] = 1.0;
    d[(z_u, w_s)] = 1.0;
    c[(z_e, th)] = -1.0;
    d[(z_e, w_r)] = 1.0;

    let mut blocks: Vec<(String, usize)> = vec![("J".into(), 1)];
    for i in 1..=nm {
        blocks.push((format!("omega{i}"), 2));
        blocks.push((format!("zeta{i}"), 1));
    }
    blocks.push(("kappa".into(), 1));
    let delta = DeltaStructure::new(blocks.iter().map(|(n, r)| (n.as_str(), *r)).collect())?;
    let channels = ChannelTable::consecutive(&[("n", 2), ("r", 1), ("s", 1)], &[("u", 1), ("e", 1)]);
    LfrModel::new(StateSpace::new(a, b, c, d)?, delta, 1, 2, channels)
}

/// Full-order template without feedthrough, so the noise channel stays
/// strictly proper.
pub fn build_template(cfg: &BenchConfig) -> ControllerTemplate {
    ControllerTemplate::full_order(cfg.controller_order, 2, 1, false)
}

/// `W3(s) = (10 s + 1) / (2 (10 s + 0.01))`.
pub fn bandwidth_weight() -> StateSpace {
    StateSpace::new(
        Mat::from_element(1, 1, -0.001),
        Mat::from_element(1, 1, 1.0),
        Mat::from_element(1, 1, 0.5 * 0.099),
        Mat::from_element(1, 1, 0.5),
    )
    .expect("scalar weight")
}

/// Requirements: soft H2^2 of `n -> u` weighted by 1/200; hard H-infinity
/// of `s -> u` weighted by 1/2 (modulus margin 0.5); hard H-infinity of
/// `r -> e` weighted by `W3`.
pub fn build_requirements(beta: f64) -> Result<Vec<Requirement>> {
    let gain = |g: f64, n: usize| StateSpace::static_gain(Mat::identity(n, n) * g);
    Ok(vec![
        Requirement {
            name: "noise_to_command".into(),
            loss: LossSpec::new(NormKind::H2, 2, gain(1.0 / 200.0, 1), "n", "u")?,
            role: Role::Soft,
            bound: 1.0,
            beta,
        },
        Requirement {
            name: "modulus_margin".into(),
            loss: LossSpec::new(NormKind::Hinf, 1, gain(0.5, 1), "s", "u")?,
            role: Role::Hard,
            bound: 1.0,
            beta,
        },
        Requirement {
            name: "bandwidth".into(),
            loss: LossSpec::new(NormKind::Hinf, 1, bandwidth_weight(), "r", "e")?,
            role: Role::Hard,
            bound: 1.0,
            beta,
        },
    ])
}

/// Model, template and the CVaR problem at `beta = 0.95`, starting from
/// the reference controller.
pub fn build_benchmark(cfg: &BenchConfig) -> Result<(LfrModel, ControllerTemplate, ProblemSpec)> {
    let model = build_model(cfg)?;
    let template = build_template(cfg);
    let k0 = reference_controller(cfg)?;
    let spec = ProblemSpec {
        model: model.clone(),
        template: template.clone(),
        requirements: build_requirements(0.95)?,
        mode: Mode::Cvar,
        scenarios: ScenarioConfig::new(cfg.distributions(), cfg.constraint(), cfg.seed),
        options: SolverOptions { stability_margin: cfg.min_decay, max_iter: cfg.max_iter, ..SolverOptions::default() },
        k0: Some(k0),
    };
    spec.validate()?;
    Ok((model, template, spec))
}

/// PD law placing the rigid-body poles at `reference_wn`,
/// `reference_zeta`, filtered by four first-order lags at
/// `reference_rolloff` and written in the template's coordinates:
/// `u = F(s) (kp y_angle + kd y_rate)`, `F(s) = (w_f / (s + w_f))^4`.
pub fn reference_controller(cfg: &BenchConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = cfg.controller_order;
    let wf = cfg.reference_rolloff;
    let kp = cfg.inertia * cfg.reference_wn * cfg.reference_wn;
    let kd = 2.0 * cfg.reference_zeta * cfg.inertia * cfg.reference_wn;
    let mut a = Mat::zeros(n, n);
    // the first n - 4 states are spare, stable and disconnected
    for i in 0..n - 4 {
        a[(i, i)] = -wf;
    }
    let o = n - 4;
    for i in 0..4 {
        a[(o + i, o + i)] = -wf;
        if i > 0 {
            a[(o + i, o + i - 1)] = wf;
        }
    }
    let mut b = Mat::zeros(n, 2);
    b[(o, 0)] = wf * kp;
    b[(o, 1)] = wf * kd;
    let mut c = Mat::zeros(1, n);
    c[(0, n - 1)] = 1.0;
    let k = StateSpace::new(a, b, c, Mat::zeros(1, 2))?;
    build_template(cfg).vectorize(&k)
}
