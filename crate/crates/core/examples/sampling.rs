//! Seeded parameter sampling with a rejection constraint, 3-sigma
//! truncation, and the sample count behind a coverage statement.

use cvarsynth::sampling::{
    draw_samples, sample_bound, truncate_3sigma, ConstraintExpr, DistributionSpec, ParamDistribution,
};

fn main() -> cvarsynth::Result<()> {
    let specs = DistributionSpec::new(vec![
        ParamDistribution::gaussian("stiffness", 0.0, 1.0 / 3.0),
        ParamDistribution::gaussian("damping", 0.0, 1.0 / 3.0),
        ParamDistribution::uniform("angle", -1.0, 1.0),
    ])?;
    // reject jointly extreme stiffness and damping
    let disk = ConstraintExpr::Quadratic { terms: vec![(0, 0, 1.0), (1, 1, 1.0)], linear: vec![], constant: -0.25 };

    let set = draw_samples(&specs, Some(&disk), 10_000, 42)?;
    println!(
        "{} samples, {} rejected (acceptance {:.3}), generator {}",
        set.len(),
        set.rejected_count,
        set.acceptance_rate(),
        set.generator_id
    );
    for s in set.samples.iter().take(3) {
        println!("  {s:.4?}");
    }

    let short = draw_samples(&specs, Some(&disk), 100, 42)?;
    println!("the 100-sample draw is a prefix of the 10000-sample one: {}", short.samples[..] == set.samples[..100]);

    let truncated = truncate_3sigma(&specs);
    for p in &truncated.params {
        println!("  {} truncated to {:?}", p.name, p.truncation);
    }

    let path = std::env::temp_dir().join("cvarsynth_samples.csv");
    set.write_csv(&path)?;
    println!("wrote {}", path.display());

    for (gamma, eps) in [(1e-4, 1e-3), (1e-2, 1e-2), (0.5, 0.5)] {
        println!("confidence 1 - {gamma}, coverage 1 - {eps}: N = {}", sample_bound(gamma, eps)?);
    }
    Ok(())
}
