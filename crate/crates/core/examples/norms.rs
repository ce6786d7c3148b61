//! H2 and H-infinity norms of small systems, checked against closed forms.

use cvarsynth::lti::{connect_series, first_order, h2_norm, hinf_norm, second_order, DEFAULT_HINF_TOL};

fn main() -> cvarsynth::Result<()> {
    let lag = first_order(2.0, 1.0);
    println!("1/(s+2): H2 = {:.12}, closed form {:.12}", h2_norm(&lag)?, 1.0 / (2.0f64 * 2.0).sqrt());

    for zeta in [0.05, 0.2, 0.5] {
        let res = second_order(3.0, zeta, 1.0);
        let norm = hinf_norm(&res, DEFAULT_HINF_TOL)?;
        let exact = 1.0 / (2.0 * zeta * (1.0 - zeta * zeta).sqrt());
        let w_peak = 3.0 * (1.0 - 2.0 * zeta * zeta).sqrt();
        println!(
            "zeta {zeta}: Hinf = {:.10} (exact {exact:.10}), peak at {:?} rad/s (exact {w_peak:.6})",
            norm.value, norm.peak_freqs
        );
    }

    // a filtered resonance: the series connection has a smaller peak
    let chain = connect_series(&second_order(3.0, 0.05, 1.0), &first_order(1.0, 1.0))?;
    println!(
        "resonance then lag: H2 = {:.6}, Hinf = {:.6}",
        h2_norm(&chain)?,
        hinf_norm(&chain, DEFAULT_HINF_TOL)?.value
    );
    Ok(())
}
