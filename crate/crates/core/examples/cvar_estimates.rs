//! Value at risk, conditional value at risk and the subgradient of the
//! sample-average objective on the benchmark's losses at its reference
//! controller.

use cvarsynth::bench::{build_benchmark, reference_controller, BenchConfig};
use cvarsynth::cvar::{
    batch_eval_many, empirical_estimates, histogram, minimize_alpha, saa_objective, saa_subgradient,
};
use cvarsynth::synth::evaluation_scenarios;

fn main() -> cvarsynth::Result<()> {
    let cfg = BenchConfig::default();
    let (model, template, spec) = build_benchmark(&cfg)?;
    let k0 = reference_controller(&cfg)?;
    let set = evaluation_scenarios(&spec, 2000, 1)?;
    let batches = batch_eval_many(&model, &spec.specs(), &template, &k0, &set.samples, true)?;

    for (req, batch) in spec.requirements.iter().zip(&batches) {
        let (alpha, cvar) = minimize_alpha(batch, req.beta)?;
        let est = empirical_estimates(batch, req.beta, f64::NAN)?;
        println!(
            "{:<17} var {:.5e}  cvar {:.5e}  mean {:.5e}  worst {:.5e}  unstable {}",
            req.name,
            est.var,
            est.cvar,
            est.mean,
            est.worst_in_sample,
            batch.unstable_count()
        );
        // the objective is minimal at the value at risk and larger on either side
        let f = |a: f64| saa_objective(batch, req.beta, a);
        println!("  F(var) = {cvar:.6e}, F(0.9 var) = {:.6e}, F(1.1 var) = {:.6e}", f(0.9 * alpha)?, f(1.1 * alpha)?);
        if batch.unstable_count() == 0 {
            let g = saa_subgradient(batch, req.beta, alpha)?;
            let norm = g.d_k.iter().map(|x| x * x).sum::<f64>().sqrt();
            println!("  |dF/dk| = {norm:.3e}, dF/dalpha = {:.3}, ties {}", g.d_alpha, g.tie_count);
        }
        let bins = histogram(&batch.finite_values(), 12);
        let peak = bins.iter().map(|b| b.count).max().unwrap_or(1).max(1);
        for b in &bins {
            println!("  {:>12.5e} {}", b.left, "#".repeat(40 * b.count / peak));
        }
    }
    Ok(())
}
