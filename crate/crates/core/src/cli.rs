//! Command-line front end.
//!
//! Exit codes: 0 success (and `CONVERGED` for `synth`), 1 bad input or
//! I/O failure, 2 `STALLED` or `ITER_LIMIT`, 3 `INFEASIBLE_STABILIZATION`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{build_benchmark, BenchConfig};
use crate::cvar::{with_workers, HistogramBin, MetricsRecord};
use crate::error::{Error, Result};
use crate::format::to_json_pretty;
use crate::lfr::ModelFile;
use crate::sampling::{sample_bound, ScenarioSet};
use crate::synth::{
    compare, evaluate_controller, evaluation_scenarios, solve, write_log_csv, Comparison, ComparisonRow, Mode,
    ProblemFile, ProblemSpec, ResultFile,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "cvarsynth", version, about = "CVaR-based robust controller synthesis over sampled uncertainty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a controller; writes result.json and log.csv.
    Synth(SynthArgs),
    /// Evaluate a result on fresh samples; writes metrics.json and histogram.csv.
    Analyze(AnalyzeArgs),
    /// Sample size for a coverage statement, optionally checked on a result.
    Certify(CertifyArgs),
    /// Evaluate several results on one common sample set.
    Compare(CompareArgs),
    /// Write the flexible spacecraft benchmark as model and problem files.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Worker threads (0 = one per core).
    #[arg(long, env = "CVARSYNTH_WORKERS", default_value_t = 0)]
    pub workers: usize,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Overrides the problem's mode.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single sample size instead of the schedule (random part of the
    /// min-max set in min-max mode).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Risk level of every requirement.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Warm start from the controller of this result file.
    #[arg(long)]
    pub result: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long)]
    pub result: PathBuf,
    /// Evaluation seed (default: the problem's).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluation sample count (default: the problem's).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 60)]
    pub bins: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    /// Confidence level: probability that the statement fails.
    #[arg(long)]
    pub gamma: f64,
    /// Accuracy level: probability mass left uncovered.
    #[arg(long)]
    pub eps: f64,
    #[arg(long, requires = "result")]
    pub problem: Option<PathBuf>,
    #[arg(long, requires = "problem")]
    pub result: Option<PathBuf>,
    /// Samples to evaluate (default: the required count).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Result files, each labelled by its file stem.
    #[arg(long, required = true, num_args = 1..)]
    pub result: Vec<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 60)]
    pub bins: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Scenario seed written into the problem.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

/// `analyze` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisFile {
    pub config_hash: String,
    pub result_config_hash: String,
    pub generator_id: String,
    pub seed: u64,
    pub samples: usize,
    pub metrics: Vec<MetricsRecord>,
}

/// `compare` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonFile {
    pub config_hash: String,
    pub generator_id: String,
    pub seed: u64,
    pub samples: usize,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedRequirement {
    pub requirement: String,
    pub worst_in_sample: f64,
    pub unstable_count: usize,
}

/// `certify` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub gamma: f64,
    pub eps: f64,
    pub required_samples: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub requirements: Vec<CertifiedRequirement>,
    pub statement: String,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

pub fn execute(command: Command) -> Result<i32> {
    let workers = match &command {
        Command::Synth(a) => a.common.workers,
        Command::Analyze(a) => a.common.workers,
        Command::Certify(a) => a.common.workers,
        Command::Compare(a) => a.common.workers,
        Command::Bench(a) => a.common.workers,
    };
    with_workers(workers, move || match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Certify(a) => cmd_certify(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Bench(a) => cmd_bench(&a),
    })?
}

fn out_dir(common: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&common.out).map_err(|e| Error::Io(format!("{}: {e}", common.out.display())))?;
    Ok(&common.out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Loads a problem file and applies the overrides; the hash is taken of
/// the effective problem.
fn load_problem(path: &Path, beta: Option<f64>) -> Result<(ProblemFile, ProblemSpec)> {
    let mut file = ProblemFile::load(path)?;
    if let Some(b) = beta {
        for r in &mut file.requirements {
            r.beta = b;
        }
    }
    let spec = file.spec()?;
    Ok((file, spec))
}

fn load_result(path: &Path, spec: &ProblemSpec) -> Result<ResultFile> {
    let r = ResultFile::load(path)?;
    spec.template
        .check_len(&r.k_star)
        .map_err(|e| Error::format(format!("{}: k_star", path.display()), e.to_string()))?;
    Ok(r)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let mut file = ProblemFile::load(&a.problem)?;
    if let Some(m) = a.mode {
        file.mode = m;
    }
    if let Some(s) = a.seed {
        file.scenarios.seed = s;
    }
    if let Some(n) = a.samples {
        match file.mode {
            Mode::Cvar => file.scenarios.n_schedule = vec![n],
            Mode::Minmax => file.scenarios.minmax_samples = n,
        }
    }
    if let Some(b) = a.beta {
        for r in &mut file.requirements {
            r.beta = b;
        }
    }
    let spec = file.spec()?;
    let k0 = match &a.result {
        Some(p) => load_result(p, &spec)?.k_star,
        None => spec.initial_k(),
    };
    let hash = file.config_hash();
    let result = solve(&spec, &k0)?;
    let dir = out_dir(&a.common)?;
    ResultFile::new(&result, &hash).save(&dir.join("result.json"))?;
    write_log_csv(&dir.join("log.csv"), &result.log)?;
    let mut line =
        format!("{:?} {:?} after {} iterations, N = {}", result.mode, result.status, result.iterations, result.final_n);
    if !result.message.is_empty() {
        let _ = write!(line, ": {}", result.message);
    }
    println!("{line}");
    for (name, e) in result.names.iter().zip(&result.estimates) {
        println!("  {name}: var {:.6e} cvar {:.6e} worst {:.6e}", e.var, e.cvar, e.worst_in_sample);
    }
    Ok(result.status.exit_code())
}

fn histogram_csv(path: &Path, series: &[(String, String, Vec<HistogramBin>)]) -> Result<()> {
    let io = |e: csv::Error| Error::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["label", "requirement", "bin_left", "bin_right", "count"]).map_err(io)?;
    for (label, req, bins) in series {
        for b in bins {
            w.write_record([
                label.clone(),
                req.clone(),
                format!("{:.16e}", b.left),
                format!("{:.16e}", b.right),
                b.count.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn eval_set(spec: &ProblemSpec, samples: Option<usize>, seed: Option<u64>) -> Result<ScenarioSet> {
    let n = samples.unwrap_or(spec.scenarios.eval_samples);
    evaluation_scenarios(spec, n, seed.unwrap_or(spec.scenarios.eval_seed))
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<i32> {
    let (file, spec) = load_problem(&a.problem, a.beta)?;
    let result = load_result(&a.result, &spec)?;
    let scenarios = eval_set(&spec, a.samples, a.seed)?;
    let ev = evaluate_controller(&spec, &result.k_star, &scenarios)?;
    let dir = out_dir(&a.common)?;
    let out = AnalysisFile {
        config_hash: file.config_hash(),
        result_config_hash: result.config_hash.clone(),
        generator_id: scenarios.generator_id.clone(),
        seed: scenarios.seed,
        samples: scenarios.len(),
        metrics: ev.metrics.clone(),
    };
    write(&dir.join("metrics.json"), &to_json_pretty(&out)?)?;
    let series: Vec<_> =
        spec.names().into_iter().zip(ev.histograms(a.bins)).map(|(n, h)| ("result".to_string(), n, h)).collect();
    histogram_csv(&dir.join("histogram.csv"), &series)?;
    let table = Comparison {
        rows: ev.metrics.iter().map(|m| ComparisonRow { label: "result".into(), metrics: m.clone() }).collect(),
        evaluations: vec![("result".into(), ev)],
    }
    .table();
    print!("{table}");
    Ok(EXIT_OK)
}

fn percent(x: f64) -> String {
    let s = format!("{:.6}", 100.0 * x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}%")
}

pub fn cmd_certify(a: &CertifyArgs) -> Result<i32> {
    let required = sample_bound(a.gamma, a.eps)?;
    println!("required samples: {required}");
    let mut cert = CertificateFile {
        gamma: a.gamma,
        eps: a.eps,
        required_samples: required,
        config_hash: None,
        samples: None,
        seed: None,
        requirements: Vec::new(),
        statement: format!(
            "{required} samples suffice for a confidence of {} and a coverage of {}",
            percent(1.0 - a.gamma),
            percent(1.0 - a.eps)
        ),
    };
    if let (Some(p), Some(r)) = (&a.problem, &a.result) {
        let (file, spec) = load_problem(p, None)?;
        let result = load_result(r, &spec)?;
        let n = a.samples.unwrap_or(required as usize);
        let scenarios = eval_set(&spec, Some(n), a.seed)?;
        let ev = evaluate_controller(&spec, &result.k_star, &scenarios)?;
        cert.config_hash = Some(file.config_hash());
        cert.samples = Some(n);
        cert.seed = Some(scenarios.seed);
        cert.requirements = ev
            .metrics
            .iter()
            .zip(&ev.values)
            .map(|(m, v)| CertifiedRequirement {
                requirement: m.requirement.clone(),
                worst_in_sample: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                unstable_count: m.unstable_count,
            })
            .collect();
        cert.statement = if n as u64 >= required {
            format!(
                "with N = {n} samples, each requirement stays below its worst-in-sample value with a probability of at least {} of covering at least {} of the parameter distribution",
                percent(1.0 - a.gamma),
                percent(1.0 - a.eps)
            )
        } else {
            format!("N = {n} samples is below the {required} required for these levels; no coverage statement")
        };
        for c in &cert.requirements {
            println!("  {}: worst {:.6e} ({} unstable)", c.requirement, c.worst_in_sample, c.unstable_count);
        }
    }
    println!("{}", cert.statement);
    let dir = out_dir(&a.common)?;
    write(&dir.join("certificate.json"), &to_json_pretty(&cert)?)?;
    Ok(EXIT_OK)
}

fn label_of(path: &Path, i: usize) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("result{i}"))
}

pub fn cmd_compare(a: &CompareArgs) -> Result<i32> {
    let (file, spec) = load_problem(&a.problem, a.beta)?;
    let results = a.result.iter().map(|p| load_result(p, &spec)).collect::<Result<Vec<_>>>()?;
    let mut labels: Vec<String> = a.result.iter().enumerate().map(|(i, p)| label_of(p, i)).collect();
    // repeated stems get their position appended
    for i in 0..labels.len() {
        if labels[..i].contains(&labels[i]) {
            labels[i] = format!("{}#{i}", labels[i]);
        }
    }
    let scenarios = eval_set(&spec, a.samples, a.seed)?;
    let controllers: Vec<(&str, &[f64])> =
        labels.iter().zip(&results).map(|(l, r)| (l.as_str(), r.k_star.as_slice())).collect();
    let cmp = compare(&spec, &controllers, &scenarios)?;
    let dir = out_dir(&a.common)?;
    let table = cmp.table();
    write(&dir.join("compare.txt"), &table)?;
    let out = ComparisonFile {
        config_hash: file.config_hash(),
        generator_id: scenarios.generator_id.clone(),
        seed: scenarios.seed,
        samples: scenarios.len(),
        rows: cmp.rows.clone(),
    };
    write(&dir.join("compare.json"), &to_json_pretty(&out)?)?;
    let names = spec.names();
    let series: Vec<_> = cmp
        .evaluations
        .iter()
        .flat_map(|(label, ev)| {
            names.iter().cloned().zip(ev.histograms(a.bins)).map(move |(n, h)| (label.clone(), n, h))
        })
        .collect();
    histogram_csv(&dir.join("histogram.csv"), &series)?;
    print!("{table}");
    Ok(EXIT_OK)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let mut cfg = BenchConfig::default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (model, template, spec) = build_benchmark(&cfg)?;
    let dir = out_dir(&a.common)?;
    ModelFile::new(&model, Some(&template)).save(&dir.join("model.json"))?;
    let problem = ProblemFile::new(&spec);
    problem.save(&dir.join("problem.json"))?;
    println!(
        "benchmark: {} states, {} uncertain parameters, {} controller parameters; config {}",
        model.m.order(),
        model.delta.n_params(),
        template.dim_k(),
        problem.config_hash()
    );
    Ok(EXIT_OK)
}
