mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{fixed, gaussian, scalar_plant, tradeoff_problem};
use cvarsynth::cli::{AnalysisFile, CertificateFile, ComparisonFile};
use cvarsynth::synth::{ConvergenceStatus, ProblemFile, ProblemSpec, ResultFile};
use serde_json::Value;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvarsynth")).args(args).env_remove("CVARSYNTH_WORKERS").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn save(dir: &Path, name: &str, spec: &ProblemSpec) -> PathBuf {
    let p = dir.join(name);
    ProblemFile::new(spec).save(&p).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn certify_sample_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["certify", "--gamma", "1e-4", "--eps", "1e-3", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("required samples: 9206"));
    let cert: CertificateFile =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert.required_samples, 9206);
    let o = cli(&["certify", "--gamma", "0.5", "--eps", "0.5", "--out", s(dir.path())]);
    assert!(stdout(&o).contains("required samples: 1"));
    let o = cli(&["certify", "--gamma", "1.5", "--eps", "0.5", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("gamma"));
}

#[test]
fn certify_checks_a_result() {
    let dir = tempfile::tempdir().unwrap();
    let problem = save(dir.path(), "p.json", &tradeoff_problem(gaussian(0.2, vec![40])));
    let out = dir.path().join("run");
    assert_eq!(code(&cli(&["synth", "--problem", s(&problem), "--out", s(&out)])), 0);
    let result = out.join("result.json");
    let o = cli(&[
        "certify",
        "--gamma",
        "1e-4",
        "--eps",
        "1e-3",
        "--problem",
        s(&problem),
        "--result",
        s(&result),
        "--samples",
        "10000",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("at least 99.99% of covering at least 99.9%"), "{}", stdout(&o));
    let o = cli(&["certify", "--gamma", "1e-4", "--eps", "1e-3", "--problem", s(&problem)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn synth_writes_result_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let problem = save(dir.path(), "p.json", &tradeoff_problem(fixed(vec![vec![0.0]])));
    for mode in ["cvar", "minmax"] {
        let out = dir.path().join(mode);
        let o = cli(&["synth", "--problem", s(&problem), "--mode", mode, "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let r = ResultFile::load(&out.join("result.json")).unwrap();
        assert_eq!(r.status, ConvergenceStatus::Converged);
        assert_eq!(r.config_hash.len(), 64);
        assert!((r.k_star[0] + 8.0).abs() < 1e-3);
        let log = cvarsynth::synth::read_log_csv(&out.join("log.csv")).unwrap();
        assert!(!log.is_empty());
    }
}

#[test]
fn synth_status_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tradeoff_problem(gaussian(0.2, vec![40]));
    spec.options.max_iter = 1;
    let p = save(dir.path(), "capped.json", &spec);
    let o = cli(&["synth", "--problem", s(&p), "--out", s(&dir.path().join("a"))]);
    assert_eq!(code(&o), 2, "{}", stdout(&o));
    assert!(stdout(&o).contains("IterLimit"));

    let (model, template) = scalar_plant(1.0, 0.0);
    let spec = ProblemSpec { model, template, k0: Some(vec![0.5]), ..tradeoff_problem(fixed(vec![vec![0.0]])) };
    let p = save(dir.path(), "unreachable.json", &spec);
    let o = cli(&["synth", "--problem", s(&p), "--out", s(&dir.path().join("b"))]);
    assert_eq!(code(&o), 3);
    let r = ResultFile::load(&dir.path().join("b/result.json")).unwrap();
    assert_eq!(r.status, ConvergenceStatus::InfeasibleStabilization);
}

#[test]
fn malformed_inputs_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = save(dir.path(), "p.json", &tradeoff_problem(fixed(vec![vec![0.0]])));
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    v["model"]["m"]["c"] = serde_json::json!([[1.0], [1.0, 2.0], [1.0], [0.0]]);
    let bad = dir.path().join("ragged.json");
    std::fs::write(&bad, v.to_string()).unwrap();
    let o = cli(&["synth", "--problem", s(&bad), "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("m.c"), "{}", stderr(&o));

    let o = cli(&["synth", "--problem", s(&dir.path().join("missing.json"))]);
    assert_eq!(code(&o), 1);
    let o = cli(&["synth", "--problem", s(&p), "--mode", "robust"]);
    assert_eq!(code(&o), 1);
    let o = cli(&["frobnicate"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&cli(&["--help"])), 0);
}

#[test]
fn analyze_is_reproducible_and_counts_every_sample() {
    let dir = tempfile::tempdir().unwrap();
    let p = save(dir.path(), "p.json", &tradeoff_problem(gaussian(0.2, vec![40])));
    let run = dir.path().join("run");
    assert_eq!(code(&cli(&["synth", "--problem", s(&p), "--out", s(&run)])), 0);
    let result = run.join("result.json");
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("analysis{i}"));
        let o = cli(&[
            "analyze",
            "--problem",
            s(&p),
            "--result",
            s(&result),
            "--samples",
            "3000",
            "--workers",
            workers,
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push((
            std::fs::read(out.join("metrics.json")).unwrap(),
            std::fs::read(out.join("histogram.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let a: AnalysisFile = serde_json::from_slice(&outputs[0].0).unwrap();
    assert_eq!(a.samples, 3000);
    let mut rdr = csv::Reader::from_reader(&outputs[0].1[..]);
    for m in &a.metrics {
        let total: usize = rdr
            .records()
            .map(|r| r.unwrap())
            .filter(|r| &r[1] == m.requirement.as_str())
            .map(|r| r[4].parse::<usize>().unwrap())
            .sum();
        assert_eq!(total + m.unstable_count, 3000);
        rdr = csv::Reader::from_reader(&outputs[0].1[..]);
    }
}

#[test]
fn analyze_reports_unstable_samples() {
    let dir = tempfile::tempdir().unwrap();
    // k = -0.3 leaves the loop unstable wherever d > 0.3
    let spec = ProblemSpec { k0: Some(vec![-0.3]), ..tradeoff_problem(gaussian(0.2, vec![40])) };
    let p = save(dir.path(), "p.json", &spec);
    let mut r: Value = serde_json::from_str(
        &serde_json::to_string(&ResultFile {
            mode: cvarsynth::synth::Mode::Cvar,
            status: ConvergenceStatus::Converged,
            k_star: vec![-0.3],
            alpha_star: vec![0.0, 0.0],
            metrics: vec![],
            config_hash: String::new(),
            seed: 0,
            final_n: 0,
            iterations: 0,
            evaluations: 0,
            message: String::new(),
            wall_time_s: 0.0,
        })
        .unwrap(),
    )
    .unwrap();
    r["message"] = Value::from("hand made");
    let rp = dir.path().join("r.json");
    std::fs::write(&rp, r.to_string()).unwrap();
    let o = cli(&["analyze", "--problem", s(&p), "--result", s(&rp), "--samples", "2000", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a: AnalysisFile =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    // P(d > 0.3) for sd 0.2 is about 6.7%
    let u = a.metrics[0].unstable_count;
    assert!((80..190).contains(&u), "{u}");
}

#[test]
fn compare_shares_the_sample_set() {
    let dir = tempfile::tempdir().unwrap();
    let p = save(dir.path(), "p.json", &tradeoff_problem(gaussian(0.2, vec![40])));
    let run = dir.path().join("run");
    assert_eq!(code(&cli(&["synth", "--problem", s(&p), "--out", s(&run)])), 0);
    let r = run.join("result.json");
    let out = dir.path().join("cmp");
    let o = cli(&["compare", "--problem", s(&p), "--result", s(&r), s(&r), "--samples", "500", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c: ComparisonFile = serde_json::from_str(&std::fs::read_to_string(out.join("compare.json")).unwrap()).unwrap();
    assert_eq!(c.rows.len(), 4);
    let (a, b): (Vec<_>, Vec<_>) = c.rows.iter().partition(|r| r.label == "result");
    assert_eq!(a.len(), 2);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.metrics, y.metrics);
    }
    assert!(out.join("compare.txt").exists() && out.join("histogram.csv").exists());
    let o = cli(&["compare", "--problem", s(&p), "--result", s(&r), s(&dir.path().join("nope.json"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn bench_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["bench", "--seed", "3", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let problem = ProblemFile::load(&dir.path().join("problem.json")).unwrap();
    let spec = problem.spec().unwrap();
    assert_eq!(spec.scenarios.seed, 3);
    assert!(spec.k0.is_some());
    let model = cvarsynth::lfr::ModelFile::load(&dir.path().join("model.json")).unwrap();
    assert_eq!(model.model().unwrap(), spec.model);
    assert!(stdout(&o).contains(&problem.config_hash()));
}
