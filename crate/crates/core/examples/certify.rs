//! Coverage certificate for a controller: draw as many samples as the
//! (confidence, coverage) pair requires and report the worst loss seen.

use cvarsynth::bench::{build_benchmark, reference_controller, BenchConfig};
use cvarsynth::sampling::sample_bound;
use cvarsynth::synth::{evaluate_controller, evaluation_scenarios};

fn main() -> cvarsynth::Result<()> {
    let (gamma, eps) = (1e-3, 1e-2);
    let n = sample_bound(gamma, eps)? as usize;
    let cfg = BenchConfig::default();
    let (_, _, spec) = build_benchmark(&cfg)?;
    let k = reference_controller(&cfg)?;
    let set = evaluation_scenarios(&spec, n, 2024)?;
    let ev = evaluate_controller(&spec, &k, &set)?;
    println!("{n} samples for confidence {} and coverage {}", 1.0 - gamma, 1.0 - eps);
    for m in &ev.metrics {
        if m.unstable_count > 0 {
            println!("  {}: unstable on {} samples, no bound", m.requirement, m.unstable_count);
        } else {
            println!(
                "  {}: with probability at least {} the loss stays below {:.5e} on at least {} of the parameter distribution",
                m.requirement,
                1.0 - gamma,
                m.worst_in_sample,
                1.0 - eps
            );
        }
    }
    Ok(())
}
