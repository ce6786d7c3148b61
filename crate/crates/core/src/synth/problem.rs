//! Synthesis problem definition and its JSON file form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::format::{parse_json, to_json_pretty};
use crate::lfr::{ControllerTemplate, LfrModel, ModelFile};
use crate::loss::{LossSpec, LossSpecFile};
use crate::sampling::{ConstraintExpr, DistributionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[serde(alias = "CVAR")]
    Cvar,
    #[serde(alias = "MINMAX")]
    Minmax,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cvar" => Ok(Mode::Cvar),
            "minmax" => Ok(Mode::Minmax),
            _ => Err(Error::InvalidArgument(format!("unknown mode `{s}` (expected cvar or minmax)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Requirement {
    pub name: String,
    pub loss: LossSpec,
    pub role: Role,
    pub bound: f64,
    pub beta: f64,
}

/// Where the scenarios come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub distributions: DistributionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<ConstraintExpr>,
    #[serde(default = "default_schedule")]
    pub n_schedule: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Random part of the min-max scenario set.
    #[serde(default = "default_minmax_samples")]
    pub minmax_samples: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_eval_seed")]
    pub eval_seed: u64,
    /// Explicit scenarios used in place of random draws in every stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<Vec<Vec<f64>>>,
}

fn default_schedule() -> Vec<usize> {
    vec![100, 500, 2500]
}

fn default_minmax_samples() -> usize {
    200
}

fn default_eval_samples() -> usize {
    10_000
}

fn default_eval_seed() -> u64 {
    1_000_003
}

impl ScenarioConfig {
    pub fn new(distributions: DistributionSpec, constraint: Option<ConstraintExpr>, seed: u64) -> Self {
        Self {
            distributions,
            constraint,
            n_schedule: default_schedule(),
            seed,
            minmax_samples: default_minmax_samples(),
            eval_samples: default_eval_samples(),
            eval_seed: default_eval_seed(),
            fixed: None,
        }
    }

    /// Every stage uses exactly these scenarios.
    pub fn fixed(names: Vec<String>, samples: Vec<Vec<f64>>) -> Result<Self> {
        let params = names.iter().map(|n| crate::sampling::ParamDistribution::gaussian(n, 0.0, 1.0)).collect();
        let mut c = Self::new(DistributionSpec::new(params)?, None, 0);
        c.n_schedule = vec![samples.len()];
        c.fixed = Some(samples);
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Iteration cap per stage, all smoothing rounds included.
    pub max_iter: usize,
    /// Relative improvement over `window` accepted steps that ends a round.
    pub tol_obj: f64,
    pub window: usize,
    pub tau_rounds: usize,
    pub tau_factor: f64,
    /// Relative change of the soft CVaR between stages that stops the
    /// sample-size escalation.
    pub escalation_tol: f64,
    /// Initial weight of the exact penalty on hard violations.
    pub penalty: f64,
    /// Times a stage is rerun with a tenfold penalty while infeasible.
    pub penalty_increases: usize,
    pub stabilize_iter: usize,
    /// Stabilization stops once every spectral abscissa is below `-margin`.
    pub stability_margin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol_obj: 1e-6,
            window: 5,
            tau_rounds: 9,
            tau_factor: 0.2,
            escalation_tol: 0.01,
            penalty: 10.0,
            penalty_increases: 2,
            stabilize_iter: 200,
            stability_margin: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub model: LfrModel,
    pub template: ControllerTemplate,
    pub requirements: Vec<Requirement>,
    pub mode: Mode,
    pub scenarios: ScenarioConfig,
    pub options: SolverOptions,
    pub k0: Option<Vec<f64>>,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.check_template(&self.template)?;
        let soft: Vec<usize> =
            (0..self.requirements.len()).filter(|&i| self.requirements[i].role == Role::Soft).collect();
        if soft != [0] {
            return Err(Error::format("requirements", "exactly one SOFT requirement is needed and it must come first"));
        }
        for (i, r) in self.requirements.iter().enumerate() {
            let field = format!("requirements[{i}]");
            if !(r.beta > 0.0 && r.beta < 1.0) {
                return Err(Error::format(field, format!("beta = {} not in (0, 1)", r.beta)));
            }
            if r.role == Role::Hard && !(r.bound > 0.0 && r.bound.is_finite()) {
                return Err(Error::format(field, format!("bound = {} must be positive", r.bound)));
            }
            r.loss.validate().map_err(|e| Error::format(&field, e.to_string()))?;
            self.model.channels.input(&r.loss.w_name).map_err(|e| Error::format(&field, e.to_string()))?;
            self.model.channels.output(&r.loss.z_name).map_err(|e| Error::format(&field, e.to_string()))?;
        }
        let n_params = self.model.delta.n_params();
        if self.scenarios.distributions.len() != n_params {
            return Err(Error::format(
                "scenarios.distributions",
                format!("{} distributions for {n_params} uncertain parameters", self.scenarios.distributions.len()),
            ));
        }
        self.scenarios.distributions.validate()?;
        if let Some(c) = &self.scenarios.constraint {
            c.validate(n_params)?;
        }
        if let Some(fixed) = &self.scenarios.fixed {
            if fixed.is_empty() {
                return Err(Error::format("scenarios.fixed", "no scenarios"));
            }
            if let Some(i) = fixed.iter().position(|s| s.len() != n_params) {
                return Err(Error::format(format!("scenarios.fixed[{i}]"), format!("expected {n_params} values")));
            }
        } else if self.scenarios.n_schedule.is_empty() || self.scenarios.n_schedule.contains(&0) {
            return Err(Error::format("scenarios.n_schedule", "needs at least one positive sample size"));
        }
        if let Some(k0) = &self.k0 {
            self.template.check_len(k0).map_err(|e| Error::format("k0", e.to_string()))?;
        }
        Ok(())
    }

    pub fn specs(&self) -> Vec<LossSpec> {
        self.requirements.iter().map(|r| r.loss.clone()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.requirements.iter().map(|r| r.name.clone()).collect()
    }

    /// Starting point: the file's `k0` or the zero vector.
    pub fn initial_k(&self) -> Vec<f64> {
        self.k0.clone().unwrap_or_else(|| vec![0.0; self.template.dim_k()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequirementFile {
    pub name: String,
    pub role: Role,
    #[serde(default = "default_bound")]
    pub bound: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub loss: LossSpecFile,
}

fn default_bound() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    0.95
}

/// On-disk problem: the model file (which must carry the template), the
/// requirements, the scenario configuration and solver options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub model: ModelFile,
    pub requirements: Vec<RequirementFile>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub scenarios: ScenarioConfig,
    #[serde(default)]
    pub options: SolverOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<Vec<f64>>,
}

fn default_mode() -> Mode {
    Mode::Cvar
}

impl ProblemFile {
    pub fn new(spec: &ProblemSpec) -> Self {
        Self {
            model: ModelFile::new(&spec.model, Some(&spec.template)),
            requirements: spec
                .requirements
                .iter()
                .map(|r| RequirementFile {
                    name: r.name.clone(),
                    role: r.role,
                    bound: r.bound,
                    beta: r.beta,
                    loss: LossSpecFile::new(&r.loss),
                })
                .collect(),
            mode: spec.mode,
            scenarios: spec.scenarios.clone(),
            options: spec.options.clone(),
            k0: spec.k0.clone(),
        }
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        let model = self.model.model()?;
        let template = self
            .model
            .template
            .clone()
            .ok_or_else(|| Error::format("model.template", "a problem needs a controller template"))?;
        let requirements = self
            .requirements
            .iter()
            .enumerate()
            .map(|(i, r)| {
                Ok(Requirement {
                    name: r.name.clone(),
                    loss: r.loss.spec(&format!("requirements[{i}].loss"))?,
                    role: r.role,
                    bound: r.bound,
                    beta: r.beta,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = ProblemSpec {
            model,
            template,
            requirements,
            mode: self.mode,
            scenarios: self.scenarios.clone(),
            options: self.options.clone(),
            k0: self.k0.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        parse_json("problem file", text)
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_pretty(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    /// SHA-256 of the compact JSON of the problem.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("problem serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
