//! Seeded scenario generation.
//!
//! Sample `i` is drawn from its own ChaCha8 stream (`seed`, stream `i`), so
//! the set does not depend on how the work is scheduled. Uniform variates
//! use the top 53 bits of each output shifted to the open interval
//! `(0, 1)`; Gaussians use the AS241 (PPND16) inverse normal CDF, with
//! truncation handled by mapping into the restricted quantile range.
//! Rejected candidates are redrawn from the same stream.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const GENERATOR_ID: &str = "chacha8-stream-per-sample/as241-inverse-cdf/v1";

/// Rejections allowed per requested sample before giving up.
pub const REJECTION_BUDGET_FACTOR: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Gaussian { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDistribution {
    pub name: String,
    #[serde(flatten)]
    pub dist: Distribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<(f64, f64)>,
}

impl ParamDistribution {
    pub fn gaussian(name: &str, mean: f64, sd: f64) -> Self {
        Self { name: name.into(), dist: Distribution::Gaussian { mean, sd }, truncation: None }
    }

    pub fn uniform(name: &str, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), dist: Distribution::Uniform { lo, hi }, truncation: None }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self, idx: usize) -> Result<()> {
        let field = format!("distributions[{idx}]");
        match self.dist {
            Distribution::Gaussian { mean, sd } => {
                if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
                    return Err(Error::format(field, format!("gaussian needs finite mean and sd > 0, got sd = {sd}")));
                }
            }
            Distribution::Uniform { lo, hi } => {
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    return Err(Error::format(field, format!("uniform needs lo < hi, got [{lo}, {hi}]")));
                }
            }
        }
        if let Some((lo, hi)) = self.truncation {
            if !(lo < hi) {
                return Err(Error::format(field, format!("truncation needs lo < hi, got ({lo}, {hi})")));
            }
            if let Distribution::Uniform { lo: a, hi: b } = self.dist {
                if lo.max(a) >= hi.min(b) {
                    return Err(Error::format(field, "truncation does not meet the uniform support"));
                }
            }
        }
        Ok(())
    }

    /// Maps a uniform variate `u` in (0, 1) to this distribution.
    fn transform(&self, u: f64) -> f64 {
        match self.dist {
            Distribution::Uniform { lo, hi } => {
                let (a, b) = match self.truncation {
                    Some((tl, th)) => (lo.max(tl), hi.min(th)),
                    None => (lo, hi),
                };
                a + (b - a) * u
            }
            Distribution::Gaussian { mean, sd } => {
                let p = match self.truncation {
                    Some((tl, th)) => {
                        let (pa, pb) = (normal_cdf((tl - mean) / sd), normal_cdf((th - mean) / sd));
                        pa + (pb - pa) * u
                    }
                    None => u,
                };
                let x = mean + sd * normal_quantile(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0));
                match self.truncation {
                    Some((tl, th)) => x.clamp(tl, th),
                    None => x,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DistributionSpec {
    pub params: Vec<ParamDistribution>,
}

impl DistributionSpec {
    pub fn new(params: Vec<ParamDistribution>) -> Result<Self> {
        let s = Self { params };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.iter().enumerate().try_for_each(|(i, p)| p.validate(i))
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Adds a `mean +- 3 sd` truncation to every Gaussian; uniforms are left
/// alone.
pub fn truncate_3sigma(specs: &DistributionSpec) -> DistributionSpec {
    DistributionSpec {
        params: specs
            .params
            .iter()
            .map(|p| match p.dist {
                Distribution::Gaussian { mean, sd } => {
                    ParamDistribution { truncation: Some((mean - 3.0 * sd, mean + 3.0 * sd)), ..p.clone() }
                }
                Distribution::Uniform { .. } => p.clone(),
            })
            .collect(),
    }
}

/// Scalar expression over a parameter vector. A sample is accepted when
/// the expression evaluates to a value `<= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ConstraintExpr {
    /// `constant + sum coeff * delta[index]`
    Affine {
        #[serde(default)]
        terms: Vec<(usize, f64)>,
        #[serde(default)]
        constant: f64,
    },
    /// `constant + sum coeff * delta[i] * delta[j] + sum coeff * delta[index]`
    Quadratic {
        terms: Vec<(usize, usize, f64)>,
        #[serde(default)]
        linear: Vec<(usize, f64)>,
        #[serde(default)]
        constant: f64,
    },
    Sum {
        args: Vec<ConstraintExpr>,
    },
    Min {
        args: Vec<ConstraintExpr>,
    },
    Max {
        args: Vec<ConstraintExpr>,
    },
}

impl ConstraintExpr {
    pub fn eval(&self, d: &[f64]) -> f64 {
        match self {
            ConstraintExpr::Affine { terms, constant } => constant + terms.iter().map(|&(i, c)| c * d[i]).sum::<f64>(),
            ConstraintExpr::Quadratic { terms, linear, constant } => {
                constant
                    + terms.iter().map(|&(i, j, c)| c * d[i] * d[j]).sum::<f64>()
                    + linear.iter().map(|&(i, c)| c * d[i]).sum::<f64>()
            }
            ConstraintExpr::Sum { args } => args.iter().map(|a| a.eval(d)).sum(),
            ConstraintExpr::Min { args } => args.iter().map(|a| a.eval(d)).fold(f64::INFINITY, f64::min),
            ConstraintExpr::Max { args } => args.iter().map(|a| a.eval(d)).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn accepts(&self, d: &[f64]) -> bool {
        self.eval(d) <= 0.0
    }

    /// Largest parameter index referenced.
    fn max_index(&self) -> Option<usize> {
        match self {
            ConstraintExpr::Affine { terms, .. } => terms.iter().map(|t| t.0).max(),
            ConstraintExpr::Quadratic { terms, linear, .. } => {
                terms.iter().map(|t| t.0.max(t.1)).chain(linear.iter().map(|t| t.0)).max()
            }
            ConstraintExpr::Sum { args } | ConstraintExpr::Min { args } | ConstraintExpr::Max { args } => {
                args.iter().filter_map(|a| a.max_index()).max()
            }
        }
    }

    pub fn validate(&self, n_params: usize) -> Result<()> {
        match self.max_index() {
            Some(i) if i >= n_params => {
                Err(Error::format("constraint", format!("refers to parameter {i}, only {n_params} exist")))
            }
            _ => Ok(()),
        }
    }
}

/// Accepted samples with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub names: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    pub seed: u64,
    pub rejected_count: u64,
    pub generator_id: String,
    pub specs_hash: String,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        let n = self.samples.len() as f64;
        n / (n + self.rejected_count as f64)
    }

    /// Deterministic set that is not drawn from a distribution (e.g. a
    /// single nominal point or the vertices of the box).
    pub fn fixed(names: Vec<String>, samples: Vec<Vec<f64>>) -> Self {
        Self { names, samples, seed: 0, rejected_count: 0, generator_id: "fixed".into(), specs_hash: String::new() }
    }

    /// Scenario file: header of parameter names, one row per sample.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        w.write_record(&self.names).map_err(|e| Error::Io(e.to_string()))?;
        for s in &self.samples {
            w.write_record(s.iter().map(|x| format!("{x:.16e}"))).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar(&self, specs: &DistributionSpec, constraint: Option<&ConstraintExpr>) -> ScenarioSidecar {
        ScenarioSidecar {
            seed: self.seed,
            n: self.samples.len(),
            rejected_count: self.rejected_count,
            acceptance_rate: self.acceptance_rate(),
            generator_id: self.generator_id.clone(),
            specs_hash: self.specs_hash.clone(),
            distributions: specs.clone(),
            constraint: constraint.cloned(),
        }
    }

    pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        let names: Vec<String> = r
            .headers()
            .map_err(|e| Error::format("scenario header", e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut samples = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::format(format!("scenario row {}", line + 1), e.to_string()))?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::format(format!("scenario row {}", line + 1), e.to_string()))?;
            samples.push(row);
        }
        Ok((names, samples))
    }
}

/// JSON written next to a scenario CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSidecar {
    pub seed: u64,
    pub n: usize,
    pub rejected_count: u64,
    pub acceptance_rate: f64,
    pub generator_id: String,
    pub specs_hash: String,
    pub distributions: DistributionSpec,
    pub constraint: Option<ConstraintExpr>,
}

/// SHA-256 of the canonical JSON of the distributions and constraint.
pub fn specs_hash(specs: &DistributionSpec, constraint: Option<&ConstraintExpr>) -> String {
    let text = serde_json::to_string(&(specs, constraint, GENERATOR_ID)).expect("specs serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn unit_open(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Draws `n` accepted samples.
pub fn draw_samples(
    specs: &DistributionSpec,
    constraint: Option<&ConstraintExpr>,
    n: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    specs.validate()?;
    if let Some(c) = constraint {
        c.validate(specs.len())?;
    }
    let budget = REJECTION_BUDGET_FACTOR * n as u64;
    let draws: Vec<(Vec<f64>, u64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut rejected = 0u64;
            loop {
                let x: Vec<f64> = specs.params.iter().map(|p| p.transform(unit_open(&mut rng))).collect();
                if constraint.is_none_or(|c| c.accepts(&x)) || rejected > budget {
                    return (x, rejected);
                }
                rejected += 1;
            }
        })
        .collect();
    let rejected: u64 = draws.iter().map(|d| d.1).sum();
    if rejected > budget {
        return Err(Error::ConstraintTooTight { rate: n as f64 / (n as f64 + rejected as f64), rejected });
    }
    Ok(ScenarioSet {
        names: specs.names(),
        samples: draws.into_iter().map(|d| d.0).collect(),
        seed,
        rejected_count: rejected,
        generator_id: GENERATOR_ID.into(),
        specs_hash: specs_hash(specs, constraint),
    })
}

/// Least integer `N` with `(1 - eps)^N <= gamma`, i.e. `N >= ln(gamma) / ln(1 - eps)`.
pub fn sample_bound(gamma: f64, eps: f64) -> Result<u64> {
    if !(gamma > 0.0 && gamma < 1.0 && eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence gamma = {gamma} and accuracy eps = {eps} must lie in (0, 1)"
        )));
    }
    let x = gamma.ln() / (-eps).ln_1p();
    Ok((x.ceil() as u64).max(1))
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF, Wichura's AS241 (PPND16), about 1e-16
/// relative accuracy.
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    fn poly(c: &[f64], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        133.141_667_891_784_377_45,
        1_971.590_950_306_551_442_7,
        13_731.693_765_509_461_125,
        45_921.953_931_549_871_457,
        67_265.770_927_008_700_853,
        33_430.575_583_588_128_105,
        2_509.080_928_730_122_672_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_911_252,
        687.187_007_492_057_908_3,
        5_394.196_021_424_751_107_7,
        21_213.794_301_586_595_867,
        39_307.895_800_092_710_61,
        28_729.085_735_721_942_674,
        5_226.495_278_852_545_925,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        0.241_780_725_177_450_611_77,
        0.022_723_844_989_269_184_583_3,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        0.689_767_334_985_100_004_55,
        0.148_103_976_427_480_074_59,
        0.015_198_666_563_616_457_196_6,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        0.296_560_571_828_504_891_23,
        0.026_532_189_526_576_123_093,
        0.001_242_660_947_388_078_438_6,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_937_69,
        0.136_929_880_922_735_805_31,
        0.014_875_361_290_850_614_852_5,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantile_known_values() {
        assert_eq!(normal_quantile(0.5), 0.0);
        assert_relative_eq!(normal_quantile(0.975), 1.959_963_984_540_054, max_relative = 1e-15);
        assert_relative_eq!(normal_quantile(0.95), 1.644_853_626_951_472_2, max_relative = 1e-15);
        assert_relative_eq!(normal_quantile(1e-10), -6.361_340_902_404_056, max_relative = 1e-14);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            assert_relative_eq!(normal_cdf(normal_quantile(p)), p, max_relative = 1e-13);
        }
    }

    #[test]
    fn truncation_of_gaussians() {
        let s = DistributionSpec::new(vec![
            ParamDistribution::gaussian("a", 0.0, 1.0 / 3.0),
            ParamDistribution::uniform("b", -1.0, 1.0),
            ParamDistribution::gaussian("c", 1.0, 2.0),
        ])
        .unwrap();
        let t = truncate_3sigma(&s);
        assert_eq!(t.params[0].truncation, Some((-1.0, 1.0)));
        assert_eq!(t.params[1], s.params[1]);
        assert_eq!(t.params[2].truncation, Some((-5.0, 7.0)));
    }

    #[test]
    fn uniform_draws_repeat() {
        let s = DistributionSpec::new(vec![ParamDistribution::uniform("u", -1.0, 1.0)]).unwrap();
        let a = draw_samples(&s, None, 4, 7).unwrap();
        let b = draw_samples(&s, None, 4, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.samples.iter().all(|x| x[0] > -1.0 && x[0] < 1.0));
        assert_eq!(a.rejected_count, 0);
    }

    #[test]
    fn impossible_constraint() {
        let s = DistributionSpec::new(vec![ParamDistribution::uniform("u", -1.0, 1.0)]).unwrap();
        let never = ConstraintExpr::Affine { terms: vec![], constant: 1.0 };
        let err = draw_samples(&s, Some(&never), 3, 1).unwrap_err();
        assert!(err.to_string().starts_with("constraint_too_tight"));
    }

    #[test]
    fn bounds() {
        assert_eq!(sample_bound(1e-4, 1e-3).unwrap(), 9206);
        assert!(sample_bound(0.0, 0.1).is_err());
        // ln(0.5)/ln(0.5) = 1 exactly; the least integer strictly above is 2
        assert_eq!(sample_bound(0.5, 0.5).unwrap(), 1);
    }

    #[test]
    fn constraint_language() {
        let c = ConstraintExpr::Max {
            args: vec![
                ConstraintExpr::Quadratic { terms: vec![(0, 0, 1.0), (1, 1, 1.0)], linear: vec![], constant: -2.25 },
                ConstraintExpr::Affine { terms: vec![(0, 1.0)], constant: -10.0 },
            ],
        };
        assert!(c.accepts(&[1.0, 1.0]));
        assert!(!c.accepts(&[1.5, 0.1]));
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ConstraintExpr>(&text).unwrap(), c);
        assert!(c.validate(1).is_err());
    }
}
