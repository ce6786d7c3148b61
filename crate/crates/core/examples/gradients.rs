//! Analytic loss gradients with respect to the controller parameters,
//! compared with central differences on the benchmark.

use cvarsynth::bench::{build_benchmark, reference_controller, BenchConfig};
use cvarsynth::loss::{coordinate_directions, eval_loss, finite_diff_check};

fn main() -> cvarsynth::Result<()> {
    let cfg = BenchConfig::default();
    let (model, template, spec) = build_benchmark(&cfg)?;
    let k0 = reference_controller(&cfg)?;
    let sample = vec![0.2, -0.1, 0.3, 0.0, 0.1, -0.4];
    let dirs = coordinate_directions(k0.len());
    for req in &spec.requirements {
        let v = eval_loss(&model, &req.loss, &template, &k0, &sample, true)?;
        let Some(grad) = v.grad_k else {
            println!("{}: no gradient (unstable)", req.name);
            continue;
        };
        let f =
            |k: &[f64]| eval_loss(&model, &req.loss, &template, k, &sample, false).map(|v| v.value).unwrap_or(f64::NAN);
        let report = finite_diff_check(f, &k0, &grad, &dirs, 1e-5);
        println!(
            "{:<17} loss {:.6e}  differentiable {}  {} coordinates, max relative error {:.2e}",
            req.name,
            v.value,
            v.multiplicity_flag,
            report.checks.len(),
            report.max_rel_error
        );
        if let Some(f) = &v.active_freqs {
            println!("  peak frequencies {f:.4?}");
        }
    }
    Ok(())
}
