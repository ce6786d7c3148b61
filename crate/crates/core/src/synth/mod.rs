//! Controller synthesis over sampled scenarios.
//!
//! Both programs minimize an exact-penalty merit
//!
//! ```text
//! soft(k) + rho * sum_hard max(hard_j(k) / bound_j - 1, 0)
//! ```
//!
//! where a requirement's value is its sample-average CVaR function
//! `min_alpha F(k, alpha)` (CVaR mode) or its worst loss over the scenario
//! set (min-max mode). The inner minimization over `alpha` is solved
//! exactly at every point, so the outer search runs on `k` alone. A
//! quasi-Newton method
//! runs on a smoothed upper bound of the merit (quadratic hinges,
//! log-sum-exp maxima, a barrier on the slowest decay rate) whose
//! temperature shrinks over a few rounds. Steps must keep every sampled
//! loop decaying faster than the stability margin and decrease the
//! smoothed merit; a point replaces the incumbent only if its exact merit
//! is no larger.

mod problem;
mod report;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use problem::{Mode, ProblemFile, ProblemSpec, Requirement, RequirementFile, Role, ScenarioConfig, SolverOptions};
pub use report::{
    compare, evaluate_controller, read_log_csv, write_log_csv, Comparison, ComparisonRow, ControllerEvaluation,
    ResultFile,
};

use crate::cvar::{batch_eval_many, empirical_estimates, minimize_alpha, tail_mass, CvarEstimates, LossBatch, TIE_TOL};
use crate::error::{Error, Result};
use crate::loss::{abscissa_gradient, closed_loop_abscissa, eval_losses, LossSpec};
use crate::sampling::{draw_samples, truncate_3sigma, Distribution, ScenarioSet};

/// Largest number of parameters whose sign patterns join the min-max set.
pub const MAX_VERTEX_PARAMS: usize = 10;

/// Relative slack on hard bounds for a result to count as feasible.
pub const FEASIBILITY_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConvergenceStatus {
    Converged,
    Stalled,
    IterLimit,
    InfeasibleStabilization,
}

impl ConvergenceStatus {
    /// Process exit code of the `synth` command.
    pub fn exit_code(self) -> i32 {
        match self {
            ConvergenceStatus::Converged => 0,
            ConvergenceStatus::Stalled | ConvergenceStatus::IterLimit => 2,
            ConvergenceStatus::InfeasibleStabilization => 3,
        }
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub stage: usize,
    pub stage_n: usize,
    pub iter: usize,
    pub tau: f64,
    pub exact_soft_f: f64,
    pub exact_merit: f64,
    pub max_hard_violation: f64,
    pub step_norm: f64,
    pub tie_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthResult {
    pub mode: Mode,
    pub k_star: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub names: Vec<String>,
    /// Recomputed at `k_star` on the final scenario set; empty when no
    /// stabilizing controller was found.
    pub estimates: Vec<CvarEstimates>,
    pub iterations: usize,
    /// Closed-loop evaluations (one per sample and call).
    pub evaluations: usize,
    pub wall_time_s: f64,
    pub status: ConvergenceStatus,
    pub final_n: usize,
    pub seed: u64,
    pub log: Vec<IterRecord>,
    pub message: String,
}

/// Scenarios of the `stage`-th sample size. Draws share the seed, so a
/// larger set extends a smaller one.
pub fn stage_scenarios(spec: &ProblemSpec, n: usize) -> Result<Vec<Vec<f64>>> {
    match &spec.scenarios.fixed {
        Some(s) => Ok(s.clone()),
        None => {
            let c = &spec.scenarios;
            Ok(draw_samples(&c.distributions, c.constraint.as_ref(), n, c.seed)?.samples)
        }
    }
}

/// Scenario set of the min-max program: draws from the 3-sigma truncated
/// distributions plus the sign-pattern vertices of the most influential
/// parameters.
pub fn minmax_scenarios(spec: &ProblemSpec, k: &[f64]) -> Result<Vec<Vec<f64>>> {
    if let Some(s) = &spec.scenarios.fixed {
        return Ok(s.clone());
    }
    let c = &spec.scenarios;
    let truncated = truncate_3sigma(&c.distributions);
    let mut samples = draw_samples(&truncated, c.constraint.as_ref(), c.minmax_samples.max(1), c.seed)?.samples;
    let ranges: Vec<(f64, f64)> = truncated
        .params
        .iter()
        .map(|p| {
            let (lo, hi) = match p.dist {
                Distribution::Gaussian { mean, sd } => (mean - 3.0 * sd, mean + 3.0 * sd),
                Distribution::Uniform { lo, hi } => (lo, hi),
            };
            match p.truncation {
                Some((a, b)) => (lo.max(a), hi.min(b)),
                None => (lo, hi),
            }
        })
        .collect();
    let center: Vec<f64> = ranges.iter().map(|r| 0.5 * (r.0 + r.1)).collect();
    let m = ranges.len();
    let chosen: Vec<usize> =
        if m <= MAX_VERTEX_PARAMS { (0..m).collect() } else { influential_params(spec, k, &center, &ranges)? };
    for pattern in 0..(1usize << chosen.len()) {
        let mut v = center.clone();
        for (bit, &j) in chosen.iter().enumerate() {
            v[j] = if pattern >> bit & 1 == 1 { ranges[j].1 } else { ranges[j].0 };
        }
        if c.constraint.as_ref().is_none_or(|e| e.accepts(&v)) {
            samples.push(v);
        }
    }
    Ok(samples)
}

/// Parameters ranked by the magnitude of the derivative of the summed
/// losses at the center, `MAX_VERTEX_PARAMS` largest.
fn influential_params(spec: &ProblemSpec, k: &[f64], center: &[f64], ranges: &[(f64, f64)]) -> Result<Vec<usize>> {
    let specs = spec.specs();
    let total = |d: &[f64]| -> Result<f64> {
        let v = eval_losses(&spec.model, &specs, &spec.template, k, d, false)?;
        Ok(v.iter().map(|l| if l.value.is_finite() { l.value } else { 1e300 }).sum())
    };
    let mut score: Vec<(f64, usize)> = (0..center.len())
        .into_par_iter()
        .map(|j| {
            let h = 1e-4 * (ranges[j].1 - ranges[j].0).max(1e-12);
            let (mut p, mut q) = (center.to_vec(), center.to_vec());
            p[j] += h;
            q[j] -= h;
            Ok(((total(&p)? - total(&q)?).abs() / (2.0 * h) * (ranges[j].1 - ranges[j].0), j))
        })
        .collect::<Result<_>>()?;
    score.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = score.iter().take(MAX_VERTEX_PARAMS).map(|s| s.1).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Smallest quadratic smoothing of `max(x, 0)` lying above it: equal to
/// it outside `[-tau/2, tau/2]`, at most `tau/8` above inside. Keeping the
/// smoothed merit an upper bound means its minimizers stay feasible.
fn hinge(x: f64, tau: f64) -> f64 {
    let y = x + 0.5 * tau;
    if y <= 0.0 {
        0.0
    } else if y < tau {
        0.5 * y * y / tau
    } else {
        x
    }
}

fn hinge_slope(x: f64, tau: f64) -> f64 {
    (x / tau + 0.5).clamp(0.0, 1.0)
}

/// Smoothed value, its `k` gradient, the exact value and the number of
/// ties of one requirement.
struct Part {
    smooth: f64,
    grad_k: Vec<f64>,
    exact: f64,
    ties: usize,
}

fn grad_rows(batch: &LossBatch) -> Result<&Vec<Option<Vec<f64>>>> {
    batch.grads.as_ref().ok_or_else(|| Error::MissingGradients { indices: (0..batch.len()).collect() })
}

/// Minimizer of the smoothed CVaR function `alpha + sum hinge(l - alpha) / t`.
/// Its derivative `1 - sum slope / t` is piecewise linear and
/// nondecreasing in `alpha`; the root is found on the segment between
/// consecutive breakpoints `l +- tau / 2`.
fn smoothed_alpha(values: &[f64], t: f64, tau: f64) -> f64 {
    let slopes = |a: f64| values.iter().map(|l| hinge_slope(l - a, tau)).sum::<f64>();
    let mut knots: Vec<f64> = values.iter().flat_map(|l| [l - 0.5 * tau, l + 0.5 * tau]).collect();
    knots.sort_by(f64::total_cmp);
    // first knot where the slope sum has dropped to t or below
    let (mut lo, mut hi) = (0, knots.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if slopes(knots[mid]) <= t {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let b = knots[lo];
    if lo == 0 {
        return b;
    }
    let a = knots[lo - 1];
    let (sa, sb) = (slopes(a), slopes(b));
    if sa - sb <= 0.0 {
        return b;
    }
    (a + (sa - t) / (sa - sb) * (b - a)).clamp(a, b)
}

fn cvar_part(batch: &LossBatch, beta: f64, tau: f64, dim: usize) -> Result<Part> {
    let t = tail_mass(beta, batch.len());
    let grads = grad_rows(batch)?;
    let alpha = smoothed_alpha(&batch.values, t, tau);
    let (alpha_exact, exact) = minimize_alpha(batch, beta)?;
    let mut sum = 0.0;
    let mut grad_k = vec![0.0; dim];
    for (l, g) in batch.values.iter().zip(grads) {
        sum += hinge(l - alpha, tau);
        // alpha is optimal, so only the explicit dependence on k remains
        let w = hinge_slope(l - alpha, tau);
        if w > 0.0 {
            let g = g.as_ref().ok_or(Error::MissingGradients { indices: vec![] })?;
            for (a, b) in grad_k.iter_mut().zip(g) {
                *a += w * b;
            }
        }
    }
    for a in &mut grad_k {
        *a /= t;
    }
    let ties = batch.values.iter().filter(|&&l| (l - alpha_exact).abs() <= TIE_TOL * (1.0 + alpha_exact.abs())).count();
    Ok(Part { smooth: alpha + sum / t, grad_k, exact, ties })
}

/// Log-sum-exp at temperature `tau / ln N`, which overestimates the max by
/// at most `tau`.
fn max_part(batch: &LossBatch, tau: f64, dim: usize) -> Result<Part> {
    let grads = grad_rows(batch)?;
    let tau = tau / (batch.len() as f64).ln().max(1.0);
    let m = batch.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = batch.values.iter().map(|l| ((l - m) / tau).exp()).collect();
    let s: f64 = weights.iter().sum();
    let mut grad_k = vec![0.0; dim];
    for (w, g) in weights.iter().zip(grads) {
        if *w > 0.0 {
            let g = g.as_ref().ok_or(Error::MissingGradients { indices: vec![] })?;
            for (a, b) in grad_k.iter_mut().zip(g) {
                *a += w / s * b;
            }
        }
    }
    let ties = batch.values.iter().filter(|&&l| m - l <= TIE_TOL * (1.0 + m.abs())).count();
    Ok(Part { smooth: m + tau * s.ln(), grad_k, exact: m, ties })
}

/// Merit at one point.
#[derive(Debug, Clone)]
struct Merit {
    smooth: f64,
    /// Gradient of `smooth` in `k`.
    grad: Vec<f64>,
    exact: f64,
    exact_soft: f64,
    max_violation: f64,
    ties: usize,
}

/// Evaluates losses over a fixed scenario set and assembles merits.
struct Stage<'a> {
    spec: &'a ProblemSpec,
    specs: Vec<LossSpec>,
    samples: Vec<Vec<f64>>,
    evaluations: usize,
}

/// Temperatures of one smoothing round.
#[derive(Debug, Clone)]
struct Temps {
    req: Vec<f64>,
    penalty: f64,
    /// Weight of the decay barrier.
    barrier: f64,
}

/// Sampled loops close to the decay margin: normalized slack
/// `(-margin - abscissa) / margin` in `(0, 1)` and its `k` gradient.
type Decay = Vec<(f64, Vec<f64>)>;

/// `(1 - s)^2 / s` on `(0, 1)`, zero beyond; C1 at `s = 1`.
fn barrier(s: f64) -> (f64, f64) {
    if s >= 1.0 {
        (0.0, 0.0)
    } else {
        ((1.0 - s).powi(2) / s, -(1.0 - s * s) / (s * s))
    }
}

impl<'a> Stage<'a> {
    fn new(spec: &'a ProblemSpec, samples: Vec<Vec<f64>>) -> Self {
        Self { spec, specs: spec.specs(), samples, evaluations: 0 }
    }

    /// Batches at `k`, or `None` if some sampled loop is not stable with
    /// the required margin.
    fn eval(&mut self, k: &[f64], with_grad: bool) -> Result<Option<Vec<LossBatch>>> {
        let margin = self.spec.options.stability_margin;
        let spec = self.spec;
        let clear = self
            .samples
            .par_iter()
            .all(|s| closed_loop_abscissa(&spec.model, &spec.template, k, s).is_ok_and(|a| a < -margin));
        if !clear {
            return Ok(None);
        }
        self.evaluations += self.samples.len();
        // a point where the numerics break down is treated like an unstable one
        match batch_eval_many(&self.spec.model, &self.specs, &self.spec.template, k, &self.samples, with_grad) {
            Ok(b) => Ok((b[0].unstable_count() == 0).then_some(b)),
            Err(Error::EigenNoConvergence { .. })
            | Err(Error::DeltaLoopSingular { .. })
            | Err(Error::ControllerLoopSingular { .. })
            | Err(Error::LyapunovResidual { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn abscissae(&mut self, k: &[f64]) -> Result<Vec<f64>> {
        self.evaluations += self.samples.len();
        let spec = self.spec;
        self.samples
            .par_iter()
            .map(|s| match closed_loop_abscissa(&spec.model, &spec.template, k, s) {
                Ok(a) => Ok(a),
                Err(Error::DeltaLoopSingular { .. }) | Err(Error::ControllerLoopSingular { .. }) => Ok(1e6),
                Err(e) => Err(e),
            })
            .collect()
    }

    /// Exact value of every requirement: CVaR via the inner minimization,
    /// or the worst loss.
    fn exact_values(&self, batches: &[LossBatch]) -> Result<Vec<(f64, f64)>> {
        batches
            .iter()
            .zip(&self.spec.requirements)
            .map(|(b, r)| match self.spec.mode {
                Mode::Cvar => minimize_alpha(b, r.beta),
                Mode::Minmax => Ok((0.0, b.values.iter().copied().fold(f64::NEG_INFINITY, f64::max))),
            })
            .collect()
    }

    /// Samples within twice the decay margin of the axis, with slack
    /// gradients.
    fn decay(&self, k: &[f64]) -> Result<Decay> {
        let margin = self.spec.options.stability_margin;
        let spec = self.spec;
        self.samples
            .par_iter()
            .map(|smp| {
                let a = closed_loop_abscissa(&spec.model, &spec.template, k, smp)?;
                let s = (-margin - a) / margin;
                if s >= 1.0 {
                    return Ok(None);
                }
                let (_, g) = abscissa_gradient(&spec.model, &spec.template, k, smp)?;
                Ok(Some((s, g.iter().map(|x| -x / margin).collect())))
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().flatten().collect())
    }

    fn merit(&self, batches: &[LossBatch], decay: &Decay, temps: &Temps, rho: f64) -> Result<Merit> {
        let dim = self.spec.template.dim_k();
        let mut grad = vec![0.0; dim];
        let (mut smooth, mut exact, mut exact_soft) = (0.0, 0.0, 0.0);
        for (slack, g) in decay {
            let (v, d) = barrier(*slack);
            smooth += temps.barrier * v;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += temps.barrier * d * b;
            }
        }
        let mut max_violation = f64::NEG_INFINITY;
        let mut ties = 0;
        for (r, (req, batch)) in self.spec.requirements.iter().zip(batches).enumerate() {
            let part = match self.spec.mode {
                Mode::Cvar => cvar_part(batch, req.beta, temps.req[r], dim)?,
                Mode::Minmax => max_part(batch, temps.req[r], dim)?,
            };
            ties += part.ties;
            let (scale, value, exact_term) = match req.role {
                Role::Soft => {
                    exact_soft = part.exact;
                    (1.0, part.smooth, part.exact)
                }
                Role::Hard => {
                    let g = part.smooth / req.bound - 1.0;
                    let viol = part.exact / req.bound - 1.0;
                    max_violation = max_violation.max(viol);
                    (
                        rho * hinge_slope(g, temps.penalty) / req.bound,
                        rho * hinge(g, temps.penalty),
                        rho * viol.max(0.0),
                    )
                }
            };
            smooth += value;
            exact += exact_term;
            for (a, b) in grad.iter_mut().zip(&part.grad_k) {
                *a += scale * b;
            }
        }
        Ok(Merit { smooth, grad, exact, exact_soft, max_violation: max_violation.max(0.0), ties })
    }
}

/// Per-coordinate scale of the parameters: the magnitude of the starting
/// point, floored at a tenth of its RMS.
fn parameter_scale(k: &[f64]) -> Vec<f64> {
    let rms = (k.iter().map(|x| x * x).sum::<f64>() / k.len().max(1) as f64).sqrt();
    let floor = if rms > 0.0 { 0.1 * rms } else { 1.0 };
    k.iter().map(|x| x.abs().max(floor)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StageEnd {
    Tolerance,
    LineSearch,
    IterLimit,
}

struct StageOutcome {
    k: Vec<f64>,
    alpha: Vec<f64>,
    end: StageEnd,
    accepted: usize,
    max_violation: f64,
    exact_soft: f64,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 30;
const MAX_STEP: f64 = 1.0;

/// Point of the smoothed path.
#[derive(Clone)]
struct Point {
    x: Vec<f64>,
    batches: Vec<LossBatch>,
    decay: Decay,
    merit: Merit,
}

/// Smoothed quasi-Newton on one scenario set with a fixed penalty weight.
///
/// The quasi-Newton path follows the smoothed merit. A path point becomes
/// the incumbent (and is logged) only when its exact merit does not exceed
/// the incumbent's, so logged exact merits never increase. Each round
/// restarts the path from the incumbent at a smaller temperature.
fn run_stage(st: &mut Stage, k0: &[f64], rho: f64, stage: usize, log: &mut Vec<IterRecord>) -> Result<StageOutcome> {
    let opts = &st.spec.options;
    let dim = st.spec.template.dim_k();
    let stage_n = st.samples.len();

    let batches = st.eval(k0, true)?.ok_or_else(|| Error::InvalidArgument("stage start is not stabilizing".into()))?;
    let start = st.exact_values(&batches)?;
    let value_scale: Vec<f64> = start
        .iter()
        .zip(&st.spec.requirements)
        .map(|(v, r)| match r.role {
            Role::Soft => v.1.abs().max(1e-12),
            Role::Hard => v.1.abs().max(1e-3 * r.bound),
        })
        .collect();
    let scale = parameter_scale(k0);
    // penalty in units of the starting soft value
    let rho = rho * value_scale[0];
    let n_samples = stage_n as f64;
    // soft temperature follows the incumbent, hard ones the bounds
    let temps_of = |round: usize, soft: f64| {
        let f = opts.tau_factor.powi(round as i32);
        let req = st
            .spec
            .requirements
            .iter()
            .map(|r| match r.role {
                Role::Soft => 0.1 * f * soft.abs().max(1e-12),
                Role::Hard => 0.1 * f * r.bound,
            })
            .collect();
        // the barrier is averaged over the samples, like the losses
        Temps { req, penalty: 0.1 * f, barrier: 0.1 * f * soft.abs().max(1e-12) / n_samples }
    };

    let t0 = temps_of(0, value_scale[0]);
    let decay = st.decay(k0)?;
    let m0 = st.merit(&batches, &decay, &t0, rho)?;
    log.push(record(stage, stage_n, 0, t0.req[0], &m0, 0.0));
    let mut best = Point { x: k0.to_vec(), batches, decay, merit: m0 };
    let mut accepted = 0usize;
    let mut iter = 0usize;
    let mut end = StageEnd::Tolerance;

    for round in 0..opts.tau_rounds.max(1) {
        let temps = temps_of(round, best.merit.exact_soft);
        let mut cur = best.clone();
        cur.merit = st.merit(&best.batches, &best.decay, &temps, rho)?;
        let mut history = vec![cur.merit.smooth];
        let mut h: Option<DMatrix<f64>> = None;
        end = StageEnd::Tolerance;
        loop {
            if iter >= opts.max_iter {
                end = StageEnd::IterLimit;
                break;
            }
            // gradient in scaled coordinates
            let g = DVector::from_iterator(dim, cur.merit.grad.iter().zip(&scale).map(|(g, s)| g * s));
            let gnorm = g.norm();
            if gnorm == 0.0 || !gnorm.is_finite() {
                break;
            }
            let mut step = None;
            for attempt in 0..2 {
                let mut p = match (&h, attempt) {
                    (Some(h), 0) => -(h * &g),
                    _ => &g * (-0.1 / gnorm),
                };
                if g.dot(&p) >= 0.0 {
                    continue;
                }
                let pn = p.norm();
                if pn > MAX_STEP {
                    p *= MAX_STEP / pn;
                }
                step = line_search(st, &cur, &p, &scale, &temps, rho)?;
                if step.is_some() {
                    break;
                }
                h = None;
            }
            let Some(next) = step else {
                end = StageEnd::LineSearch;
                break;
            };
            // BFGS on scaled coordinates
            let s = DVector::from_iterator(dim, next.x.iter().zip(&cur.x).zip(&scale).map(|((a, b), c)| (a - b) / c));
            let g_new = DVector::from_iterator(dim, next.merit.grad.iter().zip(&scale).map(|(g, s)| g * s));
            let y = &g_new - &g;
            let sy = s.dot(&y);
            h = if sy > 1e-12 * s.norm() * y.norm() {
                let hm = h.take().unwrap_or_else(|| DMatrix::identity(dim, dim) * (sy / y.dot(&y)));
                let r = 1.0 / sy;
                let hy = &hm * &y;
                let yhy = y.dot(&hy);
                Some(&hm - (&hy * s.transpose() + &s * hy.transpose()) * r + (&s * s.transpose()) * (r * r * yhy + r))
            } else {
                None
            };
            iter += 1;
            cur = next;
            if cur.merit.exact <= best.merit.exact {
                let step_norm = cur.x.iter().zip(&best.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                log.push(record(stage, stage_n, iter, temps.req[0], &cur.merit, step_norm));
                accepted += 1;
                best = cur.clone();
            }
            history.push(cur.merit.smooth);
            let w = opts.window.max(1);
            if history.len() > w {
                let old = history[history.len() - 1 - w];
                if old - cur.merit.smooth <= opts.tol_obj * cur.merit.smooth.abs().max(f64::MIN_POSITIVE) {
                    break;
                }
            }
        }
        if end == StageEnd::IterLimit {
            break;
        }
    }
    let k = best.x.clone();
    // the exact inner minimization over alpha at the incumbent
    let alpha = match st.spec.mode {
        Mode::Cvar => st.exact_values(&best.batches)?.iter().map(|v| v.0).collect(),
        Mode::Minmax => Vec::new(),
    };
    let m = &best.merit;
    Ok(StageOutcome { k, alpha, end, accepted, max_violation: m.max_violation, exact_soft: m.exact_soft })
}

fn record(stage: usize, stage_n: usize, iter: usize, tau: f64, m: &Merit, step_norm: f64) -> IterRecord {
    IterRecord {
        stage,
        stage_n,
        iter,
        tau,
        exact_soft_f: m.exact_soft,
        exact_merit: m.exact,
        max_hard_violation: m.max_violation,
        step_norm,
        tie_count: m.ties,
    }
}

/// Backtracking from `cur` along `p` (scaled coordinates) until the
/// smoothed merit decreases sufficiently at a point where every sampled
/// loop is stable.
fn line_search(
    st: &mut Stage,
    cur: &Point,
    p: &DVector<f64>,
    scale: &[f64],
    temps: &Temps,
    rho: f64,
) -> Result<Option<Point>> {
    let m = &cur.merit;
    let slope: f64 = m.grad.iter().zip(scale).zip(p.iter()).map(|((g, s), p)| g * s * p).sum();
    let mut a = 1.0;
    for _ in 0..MAX_HALVINGS {
        let mut x: Vec<f64> = cur.x.iter().zip(scale).zip(p.iter()).map(|((x, s), p)| x + a * s * p).collect();
        st.spec.template.project(&mut x);
        if let Some(batches) = st.eval(&x, true)? {
            let decay = st.decay(&x)?;
            let merit = st.merit(&batches, &decay, temps, rho)?;
            if merit.smooth <= m.smooth + ARMIJO * a * slope {
                return Ok(Some(Point { x, batches, decay, merit }));
            }
        }
        a *= 0.5;
    }
    Ok(None)
}

/// Outcome of [`stabilize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Stabilization {
    pub k: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub success: bool,
    pub max_abscissa: f64,
}

/// Drives the largest closed-loop spectral abscissa over `samples` below
/// `-stability_margin` by descent on a log-sum-exp of the abscissae.
/// Gradients are central differences. A `k0` that already stabilizes every
/// sample is returned unchanged.
pub fn stabilize(spec: &ProblemSpec, samples: &[Vec<f64>], k0: &[f64]) -> Result<Stabilization> {
    spec.template.check_len(k0)?;
    let mut st = Stage::new(spec, samples.to_vec());
    let opts = &spec.options;
    let mut k = k0.to_vec();
    let mut ab = st.abscissae(&k)?;
    let worst = |a: &[f64]| a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w = worst(&ab);
    if w < -opts.stability_margin {
        return Ok(Stabilization { k, iterations: 0, evaluations: st.evaluations, success: true, max_abscissa: w });
    }
    let target = -opts.stability_margin;
    let scale = parameter_scale(k0);
    let dim = k.len();
    let mut step = 0.1;
    let mut iterations = 0;
    while iterations < opts.stabilize_iter {
        if w < target {
            return Ok(Stabilization { k, iterations, evaluations: st.evaluations, success: true, max_abscissa: w });
        }
        let tau = 0.05 * (w.abs() + opts.stability_margin);
        let lse = |a: &[f64]| {
            let m = worst(a);
            m + tau * a.iter().map(|x| ((x - m) / tau).exp()).sum::<f64>().ln()
        };
        let f0 = lse(&ab);
        let mut g = vec![0.0; dim];
        for j in 0..dim {
            let h = 1e-6 * scale[j];
            let (mut kp, mut km) = (k.clone(), k.clone());
            kp[j] += h;
            km[j] -= h;
            g[j] = (lse(&st.abscissae(&kp)?) - lse(&st.abscissae(&km)?)) / (2.0 * h) * scale[j];
        }
        let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gn <= 1e-12 * (1.0 + f0.abs()) {
            break;
        }
        iterations += 1;
        let mut moved = false;
        for _ in 0..MAX_HALVINGS {
            let mut kt: Vec<f64> = (0..dim).map(|j| k[j] - step * scale[j] * g[j] / gn).collect();
            spec.template.project(&mut kt);
            let at = st.abscissae(&kt)?;
            if lse(&at) <= f0 - ARMIJO * step * gn {
                k = kt;
                ab = at;
                w = worst(&ab);
                moved = true;
                step = (2.0 * step).min(10.0);
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(Stabilization { k, iterations, evaluations: st.evaluations, success: w < target, max_abscissa: w })
}

struct Run {
    start: Instant,
    log: Vec<IterRecord>,
    iterations: usize,
    evaluations: usize,
    stage: usize,
}

impl Run {
    fn new() -> Self {
        Self { start: Instant::now(), log: Vec::new(), iterations: 0, evaluations: 0, stage: 0 }
    }

    fn infeasible(self, spec: &ProblemSpec, k: Vec<f64>, n: usize, stab: &Stabilization) -> SynthResult {
        SynthResult {
            mode: spec.mode,
            k_star: k,
            alpha_star: Vec::new(),
            names: spec.names(),
            estimates: Vec::new(),
            iterations: self.iterations + stab.iterations,
            evaluations: self.evaluations + stab.evaluations,
            wall_time_s: self.start.elapsed().as_secs_f64(),
            status: ConvergenceStatus::InfeasibleStabilization,
            final_n: n,
            seed: spec.scenarios.seed,
            log: self.log,
            message: format!(
                "no stabilizing controller found: largest spectral abscissa {:e} after {} iterations",
                stab.max_abscissa, stab.iterations
            ),
        }
    }

    /// Stabilizes if needed, then runs the stage, rerunning it with a
    /// larger penalty while hard requirements stay violated.
    fn stage(
        &mut self,
        spec: &ProblemSpec,
        samples: Vec<Vec<f64>>,
        k: Vec<f64>,
    ) -> Result<std::result::Result<StageOutcome, (Vec<f64>, Stabilization)>> {
        let stab = stabilize(spec, &samples, &k)?;
        self.iterations += stab.iterations;
        self.evaluations += stab.evaluations;
        if !stab.success {
            return Ok(Err((k, stab)));
        }
        let mut st = Stage::new(spec, samples);
        let mut k = stab.k;
        let mut rho = spec.options.penalty;
        let mut outcome;
        let mut reruns = 0;
        loop {
            self.stage += 1;
            outcome = run_stage(&mut st, &k, rho, self.stage, &mut self.log)?;
            self.iterations += outcome.accepted;
            k = outcome.k.clone();
            if outcome.max_violation <= FEASIBILITY_SLACK || reruns >= spec.options.penalty_increases {
                break;
            }
            reruns += 1;
            rho *= 10.0;
        }
        self.evaluations += st.evaluations;
        Ok(Ok(outcome))
    }

    fn finish(
        self,
        spec: &ProblemSpec,
        samples: &[Vec<f64>],
        outcome: &StageOutcome,
        any_step: bool,
    ) -> Result<SynthResult> {
        let mut st = Stage::new(spec, samples.to_vec());
        let batches = st
            .eval(&outcome.k, false)?
            .ok_or_else(|| Error::InvalidArgument("final controller lost stability".into()))?;
        let nominal = nominal_losses(spec, &outcome.k)?;
        let estimates = batches
            .iter()
            .zip(&spec.requirements)
            .zip(&nominal)
            .map(|((b, r), nom)| empirical_estimates(b, r.beta, *nom))
            .collect::<Result<Vec<_>>>()?;
        let infeasible: Vec<&str> = spec
            .requirements
            .iter()
            .zip(&estimates)
            .filter(|(r, e)| {
                let v = match spec.mode {
                    Mode::Cvar => e.cvar,
                    Mode::Minmax => e.worst_in_sample,
                };
                r.role == Role::Hard && v > r.bound * (1.0 + FEASIBILITY_SLACK)
            })
            .map(|(r, _)| r.name.as_str())
            .collect();
        let (status, message) = if outcome.end == StageEnd::IterLimit {
            (ConvergenceStatus::IterLimit, format!("iteration cap {} reached", spec.options.max_iter))
        } else if !infeasible.is_empty() {
            (ConvergenceStatus::Stalled, format!("hard requirements above their bound: {}", infeasible.join(", ")))
        } else if !any_step && outcome.end == StageEnd::LineSearch {
            (ConvergenceStatus::Stalled, "no line search succeeded".to_string())
        } else {
            (ConvergenceStatus::Converged, String::new())
        };
        let alpha_star = match spec.mode {
            Mode::Cvar => outcome.alpha.clone(),
            Mode::Minmax => estimates.iter().map(|e| e.var).collect(),
        };
        Ok(SynthResult {
            mode: spec.mode,
            k_star: outcome.k.clone(),
            alpha_star,
            names: spec.names(),
            estimates,
            iterations: self.iterations,
            evaluations: self.evaluations + st.evaluations,
            wall_time_s: self.start.elapsed().as_secs_f64(),
            status,
            final_n: samples.len(),
            seed: spec.scenarios.seed,
            log: self.log,
            message,
        })
    }
}

/// Losses at the nominal parameter point (`+inf` if unstable there).
pub fn nominal_losses(spec: &ProblemSpec, k: &[f64]) -> Result<Vec<f64>> {
    let zero = vec![0.0; spec.model.delta.n_params()];
    Ok(eval_losses(&spec.model, &spec.specs(), &spec.template, k, &zero, false)?.into_iter().map(|l| l.value).collect())
}

/// CVaR program: minimize the soft requirement's CVaR subject to the hard
/// CVaRs staying below their bounds, escalating the sample size through
/// the schedule until the soft CVaR changes by less than `escalation_tol`.
pub fn solve_cvar(spec: &ProblemSpec, k0: &[f64]) -> Result<SynthResult> {
    spec.validate()?;
    spec.template.check_len(k0)?;
    let spec = &ProblemSpec { mode: Mode::Cvar, ..spec.clone() };
    let mut run = Run::new();
    let mut k = k0.to_vec();
    spec.template.project(&mut k);
    let schedule = match &spec.scenarios.fixed {
        Some(s) => vec![s.len()],
        None => spec.scenarios.n_schedule.clone(),
    };
    let mut prev_soft: Option<f64> = None;
    let mut any_step = false;
    let mut last = None;
    for &n in &schedule {
        let samples = stage_scenarios(spec, n)?;
        let outcome = match run.stage(spec, samples.clone(), k.clone())? {
            Ok(o) => o,
            Err((k, stab)) => return Ok(run.infeasible(spec, k, n, &stab)),
        };
        any_step |= outcome.accepted > 0;
        k = outcome.k.clone();
        let soft = outcome.exact_soft;
        let stop = prev_soft.is_some_and(|p| (soft - p).abs() < spec.options.escalation_tol * soft.abs());
        prev_soft = Some(soft);
        last = Some((samples, outcome));
        if stop {
            break;
        }
    }
    let (samples, outcome) = last.expect("nonempty schedule");
    run.finish(spec, &samples, &outcome, any_step)
}

/// Min-max program over a fixed scenario set (see [`minmax_scenarios`]).
pub fn solve_minmax(spec: &ProblemSpec, k0: &[f64]) -> Result<SynthResult> {
    spec.validate()?;
    spec.template.check_len(k0)?;
    let spec = &ProblemSpec { mode: Mode::Minmax, ..spec.clone() };
    let mut run = Run::new();
    let mut k = k0.to_vec();
    spec.template.project(&mut k);
    let samples = minmax_scenarios(spec, &k)?;
    let n = samples.len();
    let outcome = match run.stage(spec, samples.clone(), k)? {
        Ok(o) => o,
        Err((k, stab)) => return Ok(run.infeasible(spec, k, n, &stab)),
    };
    let any_step = outcome.accepted > 0;
    run.finish(spec, &samples, &outcome, any_step)
}

/// Runs the program selected by `spec.mode`.
pub fn solve(spec: &ProblemSpec, k0: &[f64]) -> Result<SynthResult> {
    match spec.mode {
        Mode::Cvar => solve_cvar(spec, k0),
        Mode::Minmax => solve_minmax(spec, k0),
    }
}

/// Draws the common evaluation set of `compare` / `analyze`.
pub fn evaluation_scenarios(spec: &ProblemSpec, n: usize, seed: u64) -> Result<ScenarioSet> {
    let c = &spec.scenarios;
    draw_samples(&c.distributions, c.constraint.as_ref(), n, seed)
}
