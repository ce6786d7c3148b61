//! Result files, iteration logs and side-by-side evaluation of controllers.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{nominal_losses, ConvergenceStatus, IterRecord, Mode, ProblemSpec, SynthResult};
use crate::cvar::{batch_eval_many, empirical_estimates, histogram, HistogramBin, LossBatch, MetricsRecord};
use crate::error::{Error, Result};
use crate::format::{parse_json, to_json_pretty};
use crate::sampling::ScenarioSet;

/// On-disk synthesis result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub mode: Mode,
    pub status: ConvergenceStatus,
    pub k_star: Vec<f64>,
    pub alpha_star: Vec<f64>,
    /// Estimates on the final scenario set of the run.
    pub metrics: Vec<MetricsRecord>,
    pub config_hash: String,
    pub seed: u64,
    pub final_n: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub message: String,
    /// Not part of any reproducibility comparison.
    pub wall_time_s: f64,
}

impl ResultFile {
    pub fn new(result: &SynthResult, config_hash: &str) -> Self {
        let metrics = result
            .names
            .iter()
            .zip(&result.estimates)
            .map(|(n, e)| MetricsRecord::new(n, e, result.final_n, result.seed, 0))
            .collect();
        Self {
            mode: result.mode,
            status: result.status,
            k_star: result.k_star.clone(),
            alpha_star: result.alpha_star.clone(),
            metrics,
            config_hash: config_hash.to_string(),
            seed: result.seed,
            final_n: result.final_n,
            iterations: result.iterations,
            evaluations: result.evaluations,
            message: result.message.clone(),
            wall_time_s: result.wall_time_s,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        parse_json("result file", text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, to_json_pretty(self)?)?)
    }
}

pub fn write_log_csv(path: &Path, log: &[IterRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    for r in log {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    if log.is_empty() {
        w.write_record([
            "stage",
            "stage_n",
            "iter",
            "tau",
            "exact_soft_f",
            "exact_merit",
            "max_hard_violation",
            "step_norm",
            "tie_count",
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log_csv(path: &Path) -> Result<Vec<IterRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, rec)| rec.map_err(|e| Error::format(format!("log row {}", i + 1), e.to_string())))
        .collect()
}

/// Losses and metrics of one controller on an evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerEvaluation {
    pub metrics: Vec<MetricsRecord>,
    /// Per requirement, per sample (`+inf` where unstable).
    pub values: Vec<Vec<f64>>,
}

impl ControllerEvaluation {
    /// Histograms of the finite losses, one per requirement.
    pub fn histograms(&self, bins: usize) -> Vec<Vec<HistogramBin>> {
        self.values.iter().map(|v| histogram(v, bins)).collect()
    }
}

/// Evaluates `k` on `scenarios`. Unstable samples are left out of the
/// statistics and counted in `unstable_count`.
pub fn evaluate_controller(spec: &ProblemSpec, k: &[f64], scenarios: &ScenarioSet) -> Result<ControllerEvaluation> {
    spec.template.check_len(k)?;
    let batches = batch_eval_many(&spec.model, &spec.specs(), &spec.template, k, &scenarios.samples, false)?;
    let nominal = nominal_losses(spec, k)?;
    let metrics = spec
        .requirements
        .iter()
        .zip(&batches)
        .zip(&nominal)
        .map(|((r, b), nom)| {
            let finite = b.finite_values();
            let est = if finite.is_empty() {
                crate::cvar::CvarEstimates {
                    beta: r.beta,
                    var: f64::INFINITY,
                    cvar: f64::INFINITY,
                    mean: f64::INFINITY,
                    worst_in_sample: f64::INFINITY,
                    nominal: *nom,
                }
            } else {
                empirical_estimates(&LossBatch::from_values(finite), r.beta, *nom)?
            };
            Ok(MetricsRecord::new(&r.name, &est, scenarios.len(), scenarios.seed, b.unstable_count()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ControllerEvaluation { metrics, values: batches.into_iter().map(|b| b.values).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    #[serde(flatten)]
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub evaluations: Vec<(String, ControllerEvaluation)>,
}

impl Comparison {
    /// Fixed-width table, one line per requirement and controller.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:<6} {:>12} {:>12} {:>12} {:>12} {:>12} {:>9}",
            "requirement", "ctrl", "nominal", "mean", "var", "cvar", "worst", "unstable"
        );
        let mut rows: Vec<&ComparisonRow> = self.rows.iter().collect();
        let order: Vec<&str> = self.evaluations[0].1.metrics.iter().map(|m| m.requirement.as_str()).collect();
        rows.sort_by_key(|r| order.iter().position(|n| *n == r.metrics.requirement));
        for r in rows {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{:<16} {:<6} {:>12} {:>12} {:>12} {:>12} {:>12} {:>9}",
                m.requirement,
                r.label,
                num(m.nominal),
                num(m.mean),
                num(m.var),
                num(m.cvar),
                num(m.worst_in_sample),
                m.unstable_count
            );
        }
        s
    }
}

fn num(v: f64) -> String {
    if v != 0.0 && v.is_finite() && !(1e-3..1e5).contains(&v.abs()) {
        format!("{v:.4e}")
    } else {
        format!("{v:.5}")
    }
}

/// Evaluates every labelled controller on one common scenario set.
pub fn compare(spec: &ProblemSpec, controllers: &[(&str, &[f64])], scenarios: &ScenarioSet) -> Result<Comparison> {
    if controllers.is_empty() {
        return Err(Error::InvalidArgument("nothing to compare".into()));
    }
    let evaluations = controllers
        .iter()
        .map(|(label, k)| Ok((label.to_string(), evaluate_controller(spec, k, scenarios)?)))
        .collect::<Result<Vec<_>>>()?;
    let rows = evaluations
        .iter()
        .flat_map(|(label, ev)| {
            ev.metrics.iter().map(move |m| ComparisonRow { label: label.clone(), metrics: m.clone() })
        })
        .collect();
    Ok(Comparison { rows, evaluations })
}
