//! The benchmark end to end: min-max design from the reference controller,
//! risk-aware refinement from the min-max result, and a comparison on a
//! common fresh evaluation set.
//!
//! Takes a few minutes with the default settings. `--quick` shrinks the
//! sample sizes and iteration caps for a fast look.

use cvarsynth::bench::{build_benchmark, reference_controller, BenchConfig};
use cvarsynth::synth::{compare, evaluation_scenarios, solve_cvar, solve_minmax};

fn main() -> cvarsynth::Result<()> {
    let quick = std::env::args().any(|a| a == "--quick");
    let cfg = BenchConfig { max_iter: if quick { 15 } else { 60 }, ..BenchConfig::default() };
    let (_, _, mut spec) = build_benchmark(&cfg)?;
    if quick {
        spec.scenarios.n_schedule = vec![100];
        spec.scenarios.minmax_samples = 100;
    }
    let n_eval = if quick { 2000 } else { 10_000 };
    let k0 = reference_controller(&cfg)?;

    let minmax = solve_minmax(&spec, &k0)?;
    println!("min-max: {:?}, {} iterations, {:.1} s", minmax.status, minmax.iterations, minmax.wall_time_s);
    let cvar = solve_cvar(&spec, &minmax.k_star)?;
    println!(
        "cvar:    {:?}, {} iterations, N = {}, {:.1} s",
        cvar.status, cvar.iterations, cvar.final_n, cvar.wall_time_s
    );

    let eval = evaluation_scenarios(&spec, n_eval, spec.scenarios.eval_seed)?;
    let table = compare(&spec, &[("minmax", &minmax.k_star), ("cvar", &cvar.k_star)], &eval)?;
    println!("\n{}", table.table());
    Ok(())
}
