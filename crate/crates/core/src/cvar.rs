//! Empirical VaR / CVaR and the sample-average auxiliary function
//!
//! ```text
//! F(alpha) = alpha + 1 / ((1 - beta) N) * sum_i max(L_i - alpha, 0)
//! ```
//!
//! `F` is evaluated as `S / t + alpha (1 - k / t)` where `t = (1 - beta) N`,
//! `k = #{L_i > alpha}` and `S` sums those losses from the largest down.
//! This is algebraically the hinge sum; written this way, segments on which
//! `k = t` are exactly flat in floating point and every evaluation at a
//! given `alpha` performs the same operations regardless of where it came
//! from. `t` is snapped to the nearest integer when it is within `1e-9`
//! relative of one, so that e.g. `beta = 0.95, N = 100` gives `t = 5`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfr::{ControllerTemplate, LfrModel};
use crate::loss::{eval_losses, LossSpec};
use crate::sampling::ScenarioSet;

/// Relative tolerance for treating a loss as equal to `alpha`.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBatch {
    pub values: Vec<f64>,
    /// Gradient rows; `None` for unstable samples or when not requested.
    pub grads: Option<Vec<Option<Vec<f64>>>>,
    pub stable_mask: Vec<bool>,
    /// Per-sample differentiability flag of the loss.
    pub smooth_mask: Vec<bool>,
}

impl LossBatch {
    /// Batch of plain values (all finite values are marked stable).
    pub fn from_values(values: Vec<f64>) -> Self {
        let stable_mask = values.iter().map(|v| v.is_finite()).collect();
        let smooth_mask = vec![true; values.len()];
        Self { values, grads: None, stable_mask, smooth_mask }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn unstable_indices(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| !self.values[i].is_finite()).collect()
    }

    pub fn unstable_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_finite()).count()
    }

    /// Values with unstable samples removed.
    pub fn finite_values(&self) -> Vec<f64> {
        self.values.iter().copied().filter(|v| v.is_finite()).collect()
    }

    fn check_finite(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidArgument("empty loss batch".into()));
        }
        let bad = self.unstable_indices();
        if !bad.is_empty() {
            return Err(Error::UnstableInBatch { indices: bad });
        }
        Ok(())
    }
}

/// Per-sample losses of every requirement, in scenario order. Parallel
/// over samples; the output does not depend on the number of workers.
pub fn batch_eval_many(
    model: &LfrModel,
    specs: &[LossSpec],
    template: &ControllerTemplate,
    k: &[f64],
    scenarios: &[Vec<f64>],
    with_grad: bool,
) -> Result<Vec<LossBatch>> {
    let per_sample: Vec<_> =
        scenarios.par_iter().map(|s| eval_losses(model, specs, template, k, s, with_grad)).collect::<Result<_>>()?;
    Ok((0..specs.len())
        .map(|r| {
            let values = per_sample.iter().map(|v| v[r].value).collect();
            let stable_mask = per_sample.iter().map(|v| v[r].stable).collect();
            let smooth_mask = per_sample.iter().map(|v| v[r].multiplicity_flag).collect();
            let grads = with_grad.then(|| per_sample.iter().map(|v| v[r].grad_k.clone()).collect());
            LossBatch { values, grads, stable_mask, smooth_mask }
        })
        .collect())
}

pub fn batch_eval(
    model: &LfrModel,
    spec: &LossSpec,
    template: &ControllerTemplate,
    k: &[f64],
    scenarios: &ScenarioSet,
    with_grad: bool,
) -> Result<LossBatch> {
    Ok(batch_eval_many(model, std::slice::from_ref(spec), template, k, &scenarios.samples, with_grad)?.remove(0))
}

/// Runs `f` on a dedicated pool of `workers` threads (0 = rayon default).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!("beta = {beta} not in (0, 1)")));
    }
    Ok(())
}

/// `(1 - beta) N`, snapped to an integer when within 1e-9 relative.
pub fn tail_mass(beta: f64, n: usize) -> f64 {
    let t = (1.0 - beta) * n as f64;
    let r = t.round();
    if r > 0.0 && (t - r).abs() <= 1e-9 * r {
        r
    } else {
        t
    }
}

/// Losses sorted from the largest down.
fn sorted_desc(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// `F` from descending-sorted losses.
fn objective_sorted(desc: &[f64], t: f64, alpha: f64) -> f64 {
    let mut s = 0.0;
    let mut k = 0usize;
    for &l in desc {
        if l > alpha {
            s += l;
            k += 1;
        } else {
            break;
        }
    }
    s / t + alpha * (1.0 - k as f64 / t)
}

pub fn saa_objective(batch: &LossBatch, beta: f64, alpha: f64) -> Result<f64> {
    check_beta(beta)?;
    batch.check_finite()?;
    let t = tail_mass(beta, batch.len());
    Ok(objective_sorted(&sorted_desc(&batch.values), t, alpha))
}

/// Left end point of the minimizers of `F` and the minimum value.
///
/// `F` is convex and piecewise linear with breakpoints at the losses; its
/// slope right of `alpha` is `1 - #{L > alpha} / t`. The result is the
/// smallest loss at which that slope is `>= 0`.
pub fn minimize_alpha(batch: &LossBatch, beta: f64) -> Result<(f64, f64)> {
    check_beta(beta)?;
    batch.check_finite()?;
    let t = tail_mass(beta, batch.len());
    let desc = sorted_desc(&batch.values);
    let n = desc.len();
    let mut i = n;
    while i > 0 {
        // desc[j..i] holds the next distinct value in ascending order
        let v = desc[i - 1];
        let mut j = i - 1;
        while j > 0 && desc[j - 1] == v {
            j -= 1;
        }
        let above = j;
        if above as f64 <= t {
            let mut cvar = objective_sorted(&desc, t, v);
            if above as f64 == t && above > 0 {
                // exactly flat up to the next loss: both ends are minimizers
                cvar = cvar.min(objective_sorted(&desc, t, desc[above - 1]));
            }
            return Ok((v, cvar));
        }
        i = j;
    }
    unreachable!("the largest loss has nothing above it")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvarEstimates {
    pub beta: f64,
    pub var: f64,
    pub cvar: f64,
    pub mean: f64,
    pub worst_in_sample: f64,
    pub nominal: f64,
}

pub fn empirical_estimates(batch: &LossBatch, beta: f64, nominal: f64) -> Result<CvarEstimates> {
    let (var, cvar) = minimize_alpha(batch, beta)?;
    let n = batch.len() as f64;
    let mean = batch.values.iter().sum::<f64>() / n;
    let worst = batch.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(CvarEstimates { beta, var, cvar, mean, worst_in_sample: worst, nominal })
}

/// A subgradient of `F` in `(k, alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaaSubgradient {
    pub d_k: Vec<f64>,
    pub d_alpha: f64,
    /// Samples with `|L_i - alpha| <= TIE_TOL (1 + |alpha|)`; their hinge
    /// contributes the zero element.
    pub tie_count: usize,
}

pub fn saa_subgradient(batch: &LossBatch, beta: f64, alpha: f64) -> Result<SaaSubgradient> {
    check_beta(beta)?;
    batch.check_finite()?;
    let grads = batch.grads.as_ref().ok_or_else(|| Error::MissingGradients { indices: (0..batch.len()).collect() })?;
    let missing: Vec<usize> = (0..batch.len()).filter(|&i| grads.get(i).is_none_or(|g| g.is_none())).collect();
    if !missing.is_empty() {
        return Err(Error::MissingGradients { indices: missing });
    }
    let dim = grads[0].as_ref().map_or(0, Vec::len);
    let t = tail_mass(beta, batch.len());
    let tol = TIE_TOL * (1.0 + alpha.abs());
    let mut d_k = vec![0.0; dim];
    let (mut above, mut ties) = (0usize, 0usize);
    for (l, g) in batch.values.iter().zip(grads) {
        if (l - alpha).abs() <= tol {
            ties += 1;
        } else if *l > alpha {
            above += 1;
            for (d, x) in d_k.iter_mut().zip(g.as_ref().expect("checked")) {
                *d += x;
            }
        }
    }
    for d in &mut d_k {
        *d /= t;
    }
    Ok(SaaSubgradient { d_k, d_alpha: 1.0 - above as f64 / t, tie_count: ties })
}

/// Machine-readable metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub requirement: String,
    pub beta: f64,
    pub nominal: f64,
    pub mean: f64,
    pub var: f64,
    pub cvar: f64,
    pub worst_in_sample: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub unstable_count: usize,
}

impl MetricsRecord {
    pub fn new(requirement: &str, est: &CvarEstimates, n: usize, seed: u64, unstable_count: usize) -> Self {
        Self {
            requirement: requirement.to_string(),
            beta: est.beta,
            nominal: est.nominal,
            mean: est.mean,
            var: est.var,
            cvar: est.cvar,
            worst_in_sample: est.worst_in_sample,
            n,
            seed,
            unstable_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]` of the finite values; the last bin
/// is closed on the right.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            left: lo + width * i as f64,
            right: if i + 1 == bins {
                lo.max(hi) + if hi > lo { 0.0 } else { width }
            } else {
                lo + width * (i + 1) as f64
            },
            count: 0,
        })
        .collect();
    for v in finite {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

pub fn write_histogram_csv(path: &Path, bins: &[HistogramBin]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(["bin_left", "bin_right", "count"]).map_err(|e| Error::Io(e.to_string()))?;
    for b in bins {
        w.write_record([format!("{:.16e}", b.left), format!("{:.16e}", b.right), b.count.to_string()])
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_to_hundred() -> LossBatch {
        LossBatch::from_values((1..=100).map(f64::from).collect())
    }

    #[test]
    fn objective_examples() {
        let b = one_to_hundred();
        assert_eq!(saa_objective(&b, 0.95, 95.0).unwrap(), 98.0);
        assert_eq!(saa_objective(&b, 0.95, 200.0).unwrap(), 200.0);
        let two = LossBatch::from_values(vec![0.0, 2.0]);
        assert_eq!(saa_objective(&two, 0.5, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn minimize_examples() {
        assert_eq!(minimize_alpha(&one_to_hundred(), 0.95).unwrap(), (95.0, 98.0));
        assert_eq!(minimize_alpha(&LossBatch::from_values(vec![3.5]), 0.3).unwrap(), (3.5, 3.5));
    }

    #[test]
    fn estimates_of_one_to_hundred() {
        let e = empirical_estimates(&one_to_hundred(), 0.95, 7.0).unwrap();
        assert_eq!((e.mean, e.var, e.cvar, e.worst_in_sample, e.nominal), (50.5, 95.0, 98.0, 100.0, 7.0));
    }

    #[test]
    fn constant_losses() {
        let e = empirical_estimates(&LossBatch::from_values(vec![2.5; 17]), 0.9, 2.5).unwrap();
        assert_eq!((e.mean, e.var, e.cvar, e.worst_in_sample), (2.5, 2.5, 2.5, 2.5));
    }

    #[test]
    fn infinite_loss_is_an_error() {
        let b = LossBatch::from_values(vec![1.0, f64::INFINITY, 2.0]);
        match saa_objective(&b, 0.9, 0.0) {
            Err(Error::UnstableInBatch { indices }) => assert_eq!(indices, vec![1]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn subgradient_extremes() {
        let mut b = one_to_hundred();
        b.grads = Some(vec![Some(vec![1.0]); 100]);
        let low = saa_subgradient(&b, 0.95, 0.0).unwrap();
        assert_eq!(low.d_alpha, -19.0);
        assert_eq!(low.d_k, vec![20.0]);
        let high = saa_subgradient(&b, 0.95, 1e3).unwrap();
        assert_eq!((high.d_alpha, high.d_k[0], high.tie_count), (1.0, 0.0, 0));
        let tie = saa_subgradient(&b, 0.95, 95.0).unwrap();
        assert_eq!(tie.tie_count, 1);
        assert_eq!(tie.d_alpha, 0.0);
    }

    #[test]
    fn histogram_counts() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sqrt()).chain([f64::INFINITY]).collect();
        let h = histogram(&v, 60);
        assert_eq!(h.len(), 60);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 1000);
        assert_eq!(histogram(&[1.0, 1.0], 3).iter().map(|b| b.count).sum::<usize>(), 2);
    }
}
