//! Loss functions `L(k, delta) = ||W T_{w->z}||^p` and their derivatives
//! with respect to the controller parameters.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::StateSpaceFile;
use crate::lfr::{ClosedLoop, ControllerTemplate, LfrModel, RankOne};
use crate::lti::{
    gramian, h2_norm_squared, hinf_norm, rightmost_eigen, spectrum_of, to_complex, top_singular_pair, CMat, HinfNorm,
    StateSpace, C64, DEFAULT_HINF_TOL, DEFAULT_STABILITY_MARGIN,
};

/// Relative gap between the two largest singular values below which the
/// top one is treated as repeated.
pub const SIMPLE_SINGULAR_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NormKind {
    H2,
    Hinf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub norm: NormKind,
    /// 1, or 2 for the squared H2 norm.
    pub exponent: u32,
    pub weight: StateSpace,
    pub w_name: String,
    pub z_name: String,
}

impl LossSpec {
    pub fn new(norm: NormKind, exponent: u32, weight: StateSpace, w_name: &str, z_name: &str) -> Result<Self> {
        let spec = Self { norm, exponent, weight, w_name: w_name.to_string(), z_name: z_name.to_string() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.norm, self.exponent) {
            (_, 1) | (NormKind::H2, 2) => {}
            (kind, e) => {
                return Err(Error::InvalidArgument(format!("exponent {e} is not allowed with {kind:?}")));
            }
        }
        if self.weight.order() > 0 && !self.weight.is_stable(DEFAULT_STABILITY_MARGIN)? {
            return Err(Error::InvalidArgument(format!("weight on {} -> {} is not stable", self.w_name, self.z_name)));
        }
        Ok(())
    }
}

/// On-disk form of a [`LossSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpecFile {
    pub norm: NormKind,
    pub exponent: u32,
    pub w: String,
    pub z: String,
    pub weight: StateSpaceFile,
}

impl LossSpecFile {
    pub fn new(spec: &LossSpec) -> Self {
        Self {
            norm: spec.norm,
            exponent: spec.exponent,
            w: spec.w_name.clone(),
            z: spec.z_name.clone(),
            weight: StateSpaceFile::from_system(&spec.weight),
        }
    }

    pub fn spec(&self, field: &str) -> Result<LossSpec> {
        let weight = self.weight.to_system(&format!("{field}.weight"))?;
        LossSpec::new(self.norm, self.exponent, weight, &self.w, &self.z)
            .map_err(|e| Error::format(field, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    /// `+inf` when the closed loop is unstable.
    pub value: f64,
    pub stable: bool,
    pub grad_k: Option<Vec<f64>>,
    /// H-infinity only; `f64::INFINITY` marks a peak at infinite frequency.
    pub active_freqs: Option<Vec<f64>>,
    /// True when the loss is differentiable at this point.
    pub multiplicity_flag: bool,
}

impl LossValue {
    pub fn unstable() -> Self {
        Self { value: f64::INFINITY, stable: false, grad_k: None, active_freqs: None, multiplicity_flag: false }
    }
}

/// Loss of one requirement for one parameter sample.
pub fn eval_loss(
    model: &LfrModel,
    spec: &LossSpec,
    template: &ControllerTemplate,
    k: &[f64],
    sample: &[f64],
    with_grad: bool,
) -> Result<LossValue> {
    Ok(eval_losses(model, std::slice::from_ref(spec), template, k, sample, with_grad)?.remove(0))
}

/// Losses of several requirements sharing one closed-loop assembly.
pub fn eval_losses(
    model: &LfrModel,
    specs: &[LossSpec],
    template: &ControllerTemplate,
    k: &[f64],
    sample: &[f64],
    with_grad: bool,
) -> Result<Vec<LossValue>> {
    let closed = model.closed_loop(template, k, sample, with_grad)?;
    if !closed.sys.is_stable(DEFAULT_STABILITY_MARGIN)? {
        return Ok(vec![LossValue::unstable(); specs.len()]);
    }
    let values: Result<Vec<LossValue>> = specs
        .iter()
        .map(|spec| {
            let ch = closed.channel(&model.channels, &spec.w_name, &spec.z_name, &spec.weight)?;
            channel_loss(&ch, spec, with_grad)
        })
        .collect();
    match values {
        // a channel realization can put a pole exactly on the margin the
        // full loop cleared
        Err(Error::NormUnstable { .. }) => Ok(vec![LossValue::unstable(); specs.len()]),
        v => v,
    }
}

/// Largest real part of the closed-loop eigenvalues.
pub fn closed_loop_abscissa(model: &LfrModel, template: &ControllerTemplate, k: &[f64], sample: &[f64]) -> Result<f64> {
    let closed = model.closed_loop(template, k, sample, false)?;
    Ok(spectrum_of(&closed.sys.a)?.max_real_part)
}

/// Largest real part of the closed-loop eigenvalues and its gradient in
/// `k`. The gradient is that of the rightmost eigenvalue, so it is only
/// meaningful where that eigenvalue is simple.
pub fn abscissa_gradient(
    model: &LfrModel,
    template: &ControllerTemplate,
    k: &[f64],
    sample: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let closed = model.closed_loop(template, k, sample, true)?;
    let (l, v, w) = rightmost_eigen(&closed.sys.a)?;
    let wv = w.dotc(&v);
    let grad = closed
        .jacobian
        .iter()
        .map(|t| {
            let wx: C64 = w.iter().zip(t.xl.iter()).map(|(a, b)| a.conj() * b).sum();
            let xv: C64 = v.iter().zip(t.xr.iter()).map(|(a, b)| a * b).sum();
            (wx * xv / wv).re
        })
        .collect();
    Ok((l.re, grad))
}

fn channel_loss(ch: &ClosedLoop, spec: &LossSpec, with_grad: bool) -> Result<LossValue> {
    match spec.norm {
        NormKind::H2 => {
            let (sq, _) = h2_norm_squared(&ch.sys)?;
            let grad_sq = if with_grad { Some(h2_gradient(&ch.sys, &ch.jacobian)?) } else { None };
            let (value, grad_k) = if spec.exponent == 2 {
                (sq, grad_sq)
            } else {
                let norm = sq.sqrt();
                let g = grad_sq.map(|g| {
                    if norm > 0.0 {
                        g.iter().map(|x| x / (2.0 * norm)).collect()
                    } else {
                        vec![0.0; g.len()]
                    }
                });
                (norm, g)
            };
            Ok(LossValue { value, stable: true, grad_k, active_freqs: None, multiplicity_flag: true })
        }
        NormKind::Hinf => {
            let norm = hinf_norm(&ch.sys, DEFAULT_HINF_TOL)?;
            let mut active = norm.peak_freqs.clone();
            if norm.at_infinity {
                active.push(f64::INFINITY);
            }
            let (grad_k, flag) = if with_grad {
                let (g, f) = hinf_subgradient(&ch.sys, &ch.jacobian, &norm)?;
                (Some(g), f)
            } else {
                (None, norm.active_count() == 1 && !norm.all_frequencies)
            };
            Ok(LossValue {
                value: norm.value,
                stable: true,
                grad_k,
                active_freqs: Some(active),
                multiplicity_flag: flag,
            })
        }
    }
}

/// Gradient of `||G||_2^2` for the perturbations in `jacobian`, from the
/// controllability and observability Gramians.
pub fn h2_gradient(closed: &StateSpace, jacobian: &[RankOne]) -> Result<Vec<f64>> {
    let (_, p) = h2_norm_squared(closed)?;
    if closed.order() == 0 {
        return Ok(vec![0.0; jacobian.len()]);
    }
    let at = closed.a.transpose();
    let q = gramian(&at, &closed.c.transpose())?;
    let pq = &p * &q;
    let btq = closed.b.transpose() * &q;
    let cp = &closed.c * &p;
    Ok(jacobian
        .iter()
        .map(|t| {
            let term_a = t.xr.dot(&(&pq * &t.xl));
            let term_b = t.ur.dot(&(&btq * &t.xl));
            let term_c = t.yl.dot(&(&cp * &t.xr));
            2.0 * (term_a + term_b + term_c)
        })
        .collect())
}

/// One element of the Clarke subdifferential of `||G||_inf`.
///
/// Differentiable case (one active frequency, simple top singular value):
/// the gradient, flag `true`. Otherwise the uniform average of the
/// per-frequency gradients, flag `false`.
pub fn hinf_subgradient(closed: &StateSpace, jacobian: &[RankOne], norm: &HinfNorm) -> Result<(Vec<f64>, bool)> {
    let mut points: Vec<f64> = norm.peak_freqs.clone();
    if norm.at_infinity || norm.all_frequencies {
        points.push(f64::INFINITY);
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("no active frequency".into()));
    }
    let mut total = vec![0.0; jacobian.len()];
    let mut simple = true;
    for &w in &points {
        let (g, is_simple) = frequency_gradient(closed, jacobian, w)?;
        simple &= is_simple;
        for (t, x) in total.iter_mut().zip(g) {
            *t += x;
        }
    }
    let count = points.len() as f64;
    for t in &mut total {
        *t /= count;
    }
    let differentiable = simple && points.len() == 1 && !norm.all_frequencies;
    Ok((total, differentiable))
}

/// `Re(u^H dG(jw) v)` for each perturbation, with `u, v` the top singular
/// pair of `G(jw)`.
fn frequency_gradient(sys: &StateSpace, jacobian: &[RankOne], omega: f64) -> Result<(Vec<f64>, bool)> {
    let n = sys.order();
    let c_c = to_complex(&sys.c);
    let b_c = to_complex(&sys.b);
    let (g, xi, eta_solver) = if omega.is_finite() && n > 0 {
        let m = CMat::from_fn(n, n, |i, j| {
            let diag = if i == j { C64::new(0.0, omega) } else { C64::new(0.0, 0.0) };
            diag - sys.a[(i, j)]
        });
        let lu = m.clone().lu();
        let rb = lu.solve(&b_c).ok_or(Error::ResolventSingular { omega })?;
        let g = &c_c * &rb + to_complex(&sys.d);
        (g, Some(m.adjoint().lu()), Some(rb))
    } else {
        (to_complex(&sys.d), None, None)
    };
    let sp = top_singular_pair(&g)?;
    let u = DVector::from_vec(sp.left);
    let v = DVector::from_vec(sp.right);
    let simple = sp.sigma == 0.0 || (sp.sigma - sp.second) > SIMPLE_SINGULAR_GAP * sp.sigma;
    // xi = u^H C R (stored as a column), eta = R B v
    let (xi, eta) = match (xi, eta_solver) {
        (Some(adj_lu), Some(rb)) => {
            let z = adj_lu.solve(&(c_c.adjoint() * &u)).ok_or(Error::ResolventSingular { omega })?;
            (z.map(|c| c.conj()), &rb * &v)
        }
        _ => (DVector::zeros(n), DVector::zeros(n)),
    };
    let u_conj = u.map(|c| c.conj());
    let dot = |a: &DVector<C64>, b: &DVector<f64>| a.iter().zip(b.iter()).map(|(x, &y)| x * y).sum::<C64>();
    let grads = jacobian
        .iter()
        .map(|t| {
            let left = dot(&xi, &t.xl) + dot(&u_conj, &t.yl);
            let right = dot(&eta, &t.xr) + dot(&v, &t.ur);
            (left * right).re
        })
        .collect();
    Ok((grads, simple))
}

/// One probe of `finite_diff_check`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionCheck {
    pub direction: usize,
    pub finite_difference: f64,
    pub analytic: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FiniteDiffReport {
    pub checks: Vec<DirectionCheck>,
    /// Directions whose probes hit an infinite loss.
    pub skipped: Vec<usize>,
    pub max_rel_error: f64,
}

/// Central-difference directional derivatives against the analytic
/// gradient `grad`.
///
/// The step along `d` is `step * (1 + max |k_i|)` over the coordinates
/// that `d` touches; for a unit coordinate vector this is
/// `step * (1 + |k_i|)`.
pub fn finite_diff_check<F>(loss: F, k: &[f64], grad: &[f64], directions: &[Vec<f64>], step: f64) -> FiniteDiffReport
where
    F: Fn(&[f64]) -> f64,
{
    let mut report = FiniteDiffReport::default();
    for (idx, d) in directions.iter().enumerate() {
        let scale = k.iter().zip(d).filter(|(_, &di)| di != 0.0).map(|(ki, _)| ki.abs()).fold(0.0, f64::max);
        let h = step * (1.0 + scale);
        let probe = |sign: f64| -> Vec<f64> { k.iter().zip(d).map(|(ki, di)| ki + sign * h * di).collect() };
        let (fp, fm) = (loss(&probe(1.0)), loss(&probe(-1.0)));
        if !fp.is_finite() || !fm.is_finite() {
            report.skipped.push(idx);
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        let analytic: f64 = grad.iter().zip(d).map(|(g, di)| g * di).sum();
        let denom = fd.abs().max(analytic.abs());
        let rel_error = if denom == 0.0 { 0.0 } else { (fd - analytic).abs() / denom };
        report.max_rel_error = report.max_rel_error.max(rel_error);
        report.checks.push(DirectionCheck { direction: idx, finite_difference: fd, analytic, rel_error });
    }
    report
}

/// Coordinate directions `e_0 .. e_{n-1}`.
pub fn coordinate_directions(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lfr::{ChannelTable, DeltaStructure};
    use crate::lti::{first_order, Mat};
    use approx::assert_relative_eq;

    /// `k / (s + 1)` as an LFR: plant 1/(s+1) from w, static gain on its
    /// output.
    fn gain_model() -> (LfrModel, ControllerTemplate) {
        // ports (u, w) -> (y, z): x' = -x + w, y = x, z = u
        let m = StateSpace::new(
            Mat::from_element(1, 1, -1.0),
            Mat::from_row_slice(1, 2, &[0.0, 1.0]),
            Mat::from_row_slice(2, 1, &[1.0, 0.0]),
            Mat::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
        )
        .unwrap();
        let model =
            LfrModel::new(m, DeltaStructure::default(), 1, 1, ChannelTable::consecutive(&[("w", 1)], &[("z", 1)]))
                .unwrap();
        (model, ControllerTemplate::full_order(0, 1, 1, true))
    }

    #[test]
    fn h2_squared_gradient_of_gain() {
        let (model, t) = gain_model();
        let spec = LossSpec::new(NormKind::H2, 2, StateSpace::identity(1), "w", "z").unwrap();
        let v = eval_loss(&model, &spec, &t, &[2.0], &[], true).unwrap();
        assert_relative_eq!(v.value, 2.0, max_relative = 1e-12);
        assert_relative_eq!(v.grad_k.unwrap()[0], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn hinf_gradient_of_gain() {
        let (model, t) = gain_model();
        let spec = LossSpec::new(NormKind::Hinf, 1, StateSpace::identity(1), "w", "z").unwrap();
        let v = eval_loss(&model, &spec, &t, &[2.0], &[], true).unwrap();
        assert_relative_eq!(v.value, 2.0, max_relative = 1e-9);
        assert_relative_eq!(v.grad_k.unwrap()[0], 1.0, max_relative = 1e-9);
        assert!(v.multiplicity_flag);
    }

    #[test]
    fn destabilizing_gain_is_flagged() {
        // integrator with positive feedback u = +y
        let m = StateSpace::new(
            Mat::zeros(1, 1),
            Mat::from_row_slice(1, 2, &[1.0, 1.0]),
            Mat::from_row_slice(2, 1, &[1.0, 1.0]),
            Mat::zeros(2, 2),
        )
        .unwrap();
        let model =
            LfrModel::new(m, DeltaStructure::default(), 1, 1, ChannelTable::consecutive(&[("w", 1)], &[("z", 1)]))
                .unwrap();
        let t = ControllerTemplate::full_order(0, 1, 1, true);
        let spec = LossSpec::new(NormKind::Hinf, 1, StateSpace::identity(1), "w", "z").unwrap();
        let v = eval_loss(&model, &spec, &t, &[1.0], &[], true).unwrap();
        assert!(!v.stable && v.value.is_infinite() && v.grad_k.is_none());
        let v = eval_loss(&model, &spec, &t, &[-1.0], &[], false).unwrap();
        assert!(v.stable);
    }

    #[test]
    fn exponent_two_needs_h2() {
        assert!(LossSpec::new(NormKind::Hinf, 2, StateSpace::identity(1), "w", "z").is_err());
    }

    #[test]
    fn parameter_outside_channel_has_zero_gradient() {
        let sys = first_order(1.0, 1.0);
        let t = RankOne::zero(1, 1, 1);
        assert_eq!(h2_gradient(&sys, &[t]).unwrap(), vec![0.0]);
    }

    #[test]
    fn quadratic_finite_differences() {
        let k = [0.3, -1.2, 2.0];
        let grad: Vec<f64> = k.iter().map(|x| 2.0 * x).collect();
        let r = finite_diff_check(|x| x.iter().map(|v| v * v).sum(), &k, &grad, &coordinate_directions(3), 1e-6);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert!(r.skipped.is_empty());
    }

    #[test]
    fn infinite_probe_is_skipped() {
        let r =
            finite_diff_check(|x| if x[0] > 0.0 { f64::INFINITY } else { x[0] }, &[0.0], &[1.0], &[vec![1.0]], 1e-6);
        assert_eq!(r.skipped, vec![0]);
    }
}
