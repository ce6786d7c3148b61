//! System norms.
//!
//! The H-infinity norm uses the Hamiltonian test: for `gamma > sigma_max(D)`,
//! `gamma` is a singular value of `G(jw)` exactly when `jw` is an eigenvalue
//! of
//!
//! ```text
//! H(gamma) = [ A - B R^-1 D^T C         -gamma B R^-1 B^T        ]
//!            [ gamma C^T S^-1 C         -A^T + C^T D R^-1 B^T    ]
//! R = D^T D - gamma^2 I,  S = D D^T - gamma^2 I.
//! ```
//!
//! The lower bound starts from a frequency sweep. Between consecutive
//! imaginary-axis crossings of `H(lb (1 + tol))` the gain stays on one side
//! of the level; each interval above it is searched for its local maximum,
//! which raises the bound, until the test finds no crossing.

use super::freq::{sigma_max, FrequencyEvaluator};
use super::lyapunov::gramian;
use super::{eigenvalues, Mat, StateSpace, DEFAULT_STABILITY_MARGIN};
use crate::error::{Error, Result};

pub const DEFAULT_HINF_TOL: f64 = 1e-9;

const GRID_POINTS: usize = 40;
const GRID_LO: f64 = 1e-4;
const GRID_HI: f64 = 1e4;
const MAX_LIFTS: usize = 60;

/// Squared H2 norm and the controllability Gramian it came from.
pub fn h2_norm_squared(sys: &StateSpace) -> Result<(f64, Mat)> {
    let feed = sys.d.amax();
    if feed > 0.0 {
        return Err(Error::H2UndefinedFeedthrough { magnitude: feed });
    }
    let n = sys.order();
    if n == 0 {
        return Ok((0.0, Mat::zeros(0, 0)));
    }
    let p = gramian(&sys.a, &sys.b).map_err(|e| match e {
        Error::LyapunovUnstable { abscissa, .. } => Error::NormUnstable { abscissa },
        other => other,
    })?;
    let value = (&sys.c * &p * sys.c.transpose()).trace().max(0.0);
    Ok((value, p))
}

/// `sqrt(trace(C P C^T))` with `A P + P A^T + B B^T = 0`.
pub fn h2_norm(sys: &StateSpace) -> Result<f64> {
    Ok(h2_norm_squared(sys)?.0.sqrt())
}

/// H-infinity norm with the frequencies where it is attained.
#[derive(Debug, Clone, PartialEq)]
pub struct HinfNorm {
    pub value: f64,
    /// Finite frequencies (rad/s) whose gain is within `10 tol` of `value`.
    pub peak_freqs: Vec<f64>,
    /// The supremum is (also) approached as `w -> inf`.
    pub at_infinity: bool,
    /// The gain is the same at every frequency (static systems, zero systems).
    pub all_frequencies: bool,
}

impl HinfNorm {
    /// Number of active points, counting `w = inf` as one.
    pub fn active_count(&self) -> usize {
        if self.all_frequencies {
            return 1;
        }
        self.peak_freqs.len() + usize::from(self.at_infinity)
    }
}

pub fn hinf_norm(sys: &StateSpace, tol_rel: f64) -> Result<HinfNorm> {
    if !(tol_rel > 0.0 && tol_rel < 1.0) {
        return Err(Error::InvalidArgument(format!("hinf tolerance {tol_rel} not in (0, 1)")));
    }
    let d_gain = sigma_max(&super::to_complex(&sys.d));
    if sys.order() == 0 || sys.n_inputs() == 0 || sys.n_outputs() == 0 {
        return Ok(HinfNorm { value: d_gain, peak_freqs: Vec::new(), at_infinity: false, all_frequencies: true });
    }
    let poles = eigenvalues(&sys.a)?;
    let abscissa = poles.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if abscissa >= -DEFAULT_STABILITY_MARGIN {
        return Err(Error::NormUnstable { abscissa });
    }
    if sys.c.amax() == 0.0 || sys.b.amax() == 0.0 {
        return Ok(HinfNorm { value: d_gain, peak_freqs: Vec::new(), at_infinity: false, all_frequencies: true });
    }

    let eval = FrequencyEvaluator::new(sys);

    // sweep: 0, log grid, and the natural frequencies of the poles
    let mut sweep: Vec<f64> = Vec::with_capacity(GRID_POINTS + poles.len() + 1);
    sweep.push(0.0);
    let ratio = (GRID_HI / GRID_LO).ln() / (GRID_POINTS - 1) as f64;
    sweep.extend((0..GRID_POINTS).map(|i| GRID_LO * (ratio * i as f64).exp()));
    sweep.extend(poles.iter().filter(|z| z.im > 0.0).map(|z| z.im));
    sweep.extend(poles.iter().filter(|z| z.im > 0.0).map(|z| z.norm()));
    sweep.sort_by(f64::total_cmp);
    sweep.dedup();
    let gains: Vec<f64> = sweep.iter().map(|&w| eval.sigma_max(w)).collect::<Result<_>>()?;

    let mut lb = d_gain;
    for &g in &gains {
        lb = lb.max(g);
    }
    if lb == 0.0 {
        return Ok(HinfNorm { value: 0.0, peak_freqs: Vec::new(), at_infinity: false, all_frequencies: true });
    }

    // every local maximum found; the lower bound is the best of them
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    let mut lifted = false;
    for _ in 0..MAX_LIFTS {
        let gamma = lb * (1.0 + tol_rel);
        let crossings = imaginary_crossings(sys, gamma)?;
        if crossings.is_empty() {
            break;
        }
        let mut points = Vec::with_capacity(crossings.len() + 1);
        points.push(0.0);
        points.extend(crossings);
        let mut best = lb;
        for pair in points.windows(2) {
            // the gain stays on one side of gamma between crossings
            if eval.sigma_max(0.5 * (pair[0] + pair[1]))? > gamma {
                let (w, g) = brent_max(&eval, pair[0], pair[1])?;
                peaks.push((w, g));
                best = best.max(g);
                lifted = true;
            }
        }
        if best <= lb {
            break;
        }
        lb = best;
    }
    if !lifted {
        // the sweep met the tolerance: refine its local maxima
        for i in 0..sweep.len() {
            let left = if i == 0 { f64::NEG_INFINITY } else { gains[i - 1] };
            let right = gains.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
            if gains[i] >= left && gains[i] >= right && gains[i] >= 0.9 * lb {
                let lo = if i == 0 { 0.0 } else { sweep[i - 1] };
                let hi = sweep.get(i + 1).copied().unwrap_or(sweep[i] * 2.0);
                peaks.push(brent_max(&eval, lo, hi)?);
            }
        }
    }
    let value = peaks.iter().map(|p| p.1).fold(lb, f64::max);
    let threshold = value * (1.0 - 10.0 * tol_rel);
    let mut peak_freqs: Vec<f64> = Vec::new();
    peaks.sort_by(|x, y| x.0.total_cmp(&y.0));
    for (w, g) in peaks {
        if g < threshold {
            continue;
        }
        if let Some(last) = peak_freqs.last() {
            if (w - last).abs() <= 1e-6 * w.max(1e-6) {
                continue;
            }
        }
        peak_freqs.push(w);
    }
    Ok(HinfNorm { value, peak_freqs, at_infinity: d_gain >= threshold, all_frequencies: false })
}

/// Positive frequencies `w` at which `jw` is an eigenvalue of `H(gamma)`.
fn imaginary_crossings(sys: &StateSpace, gamma: f64) -> Result<Vec<f64>> {
    let h = hamiltonian(sys, gamma)?;
    let scale = h.amax().max(1.0);
    let mut out: Vec<f64> = eigenvalues(&h)?
        .into_iter()
        .filter(|z| z.im >= 0.0 && z.re.abs() <= 1e-7 * (scale.sqrt() + z.norm()))
        .map(|z| z.im)
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-12));
    Ok(out)
}

pub(crate) fn hamiltonian(sys: &StateSpace, gamma: f64) -> Result<Mat> {
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let n = sys.order();
    let (p, m) = d.shape();
    let g2 = gamma * gamma;
    let r = d.transpose() * d - Mat::identity(m, m) * g2;
    let s = d * d.transpose() - Mat::identity(p, p) * g2;
    let r_inv =
        r.try_inverse().ok_or_else(|| Error::InvalidArgument(format!("gamma {gamma} equals a singular value of D")))?;
    let s_inv =
        s.try_inverse().ok_or_else(|| Error::InvalidArgument(format!("gamma {gamma} equals a singular value of D")))?;
    let br = b * &r_inv;
    let mut h = Mat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&(a - &br * d.transpose() * c));
    h.view_mut((0, n), (n, n)).copy_from(&(-&br * b.transpose() * gamma));
    h.view_mut((n, 0), (n, n)).copy_from(&(c.transpose() * &s_inv * c * gamma));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose() + c.transpose() * d * &r_inv * b.transpose()));
    Ok(h)
}

/// Brent maximisation (golden section with parabolic steps) of
/// `sigma_max(G(jw))` on `[lo, hi]`, endpoints included.
fn brent_max(eval: &FrequencyEvaluator, lo: f64, hi: f64) -> Result<(f64, f64)> {
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (lo.max(0.0), hi.max(lo));
    let f = |w: f64| eval.sigma_max(w).map(|g| -g);
    let mut best = (a, f(a)?);
    let fb = f(b)?;
    if fb < best.1 {
        best = (b, fb);
    }
    let mut x = a + CGOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let xm = 0.5 * (a + b);
        let tol1 = 1e-10 * x.abs() + 1e-14;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u)?;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    if fx < best.1 {
        best = (x, fx);
    }
    Ok((best.0, -best.1))
}
