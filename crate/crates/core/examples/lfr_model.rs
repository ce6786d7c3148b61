//! An uncertain plant in linear fractional form: instantiate it at a few
//! parameter values, close a controller, and round-trip the model file.
//!
//! Plant: `x' = (1 + d) x + u + w`, measured `y = x`, output `z = x`;
//! the uncertainty enters through the loop `p = x`, `x' += q`, `q = d p`.

use cvarsynth::lfr::{instantiate_delta, ChannelTable, ControllerTemplate, DeltaStructure, LfrModel, ModelFile};
use cvarsynth::lti::{h2_norm, spectral_abscissa, Mat, StateSpace};

fn main() -> cvarsynth::Result<()> {
    // inputs [q, u, w], outputs [p, y, z]
    let m = StateSpace::new(
        Mat::from_element(1, 1, 1.0),
        Mat::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
        Mat::from_column_slice(3, 1, &[1.0, 1.0, 1.0]),
        Mat::zeros(3, 3),
    )?;
    let channels = ChannelTable::consecutive(&[("w", 1)], &[("z", 1)]);
    let model = LfrModel::new(m, DeltaStructure::new(vec![("d", 1)])?, 1, 1, channels)?;
    let template = ControllerTemplate::full_order(0, 1, 1, true);

    for d in [-0.5, 0.0, 0.5] {
        let open = instantiate_delta(&model, &[d])?;
        println!("d = {d:+}: open-loop pole {:+.3}", open.a[(0, 0)]);
    }

    let k = [-3.0];
    for d in [-0.5, 0.0, 0.5, 2.5] {
        let cl = model.closed_loop(&template, &k, &[d], false)?;
        let abscissa = spectral_abscissa(&cl.sys)?.max_real_part;
        let z = model.channels.output("z")?;
        let w = model.channels.input("w")?;
        let norm = if abscissa < 0.0 { h2_norm(&cl.sys.subsystem(z, w)?)? } else { f64::INFINITY };
        println!("u = {} y, d = {d:+}: closed-loop pole {abscissa:+.3}, H2(w -> z) = {norm:.4}", k[0]);
    }

    let path = std::env::temp_dir().join("cvarsynth_lfr_example.json");
    ModelFile::new(&model, Some(&template)).save(&path)?;
    let back = ModelFile::load(&path)?.model()?;
    println!("model file {} round-trips: {}", path.display(), back == model);
    Ok(())
}
