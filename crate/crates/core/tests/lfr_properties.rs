mod common;

use common::{random_lfr, rng};
use cvarsynth::lfr::{close_controller, instantiate_delta, ChannelTable, DeltaStructure, LfrModel, ModelFile};
use cvarsynth::lti::{freq_response, Mat, StateSpace};
use rand::Rng;

/// Reorders ports so that those listed first come first.
fn permute(sys: &StateSpace, inputs: &[usize], outputs: &[usize]) -> StateSpace {
    StateSpace::new(
        sys.a.clone(),
        Mat::from_fn(sys.order(), inputs.len(), |i, j| sys.b[(i, inputs[j])]),
        Mat::from_fn(outputs.len(), sys.order(), |i, j| sys.c[(outputs[i], j)]),
        Mat::from_fn(outputs.len(), inputs.len(), |i, j| sys.d[(outputs[i], inputs[j])]),
    )
    .unwrap()
}

fn max_gap(a: &StateSpace, b: &StateSpace, freqs: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for &w in freqs {
        let (ga, gb) = (freq_response(a, w).unwrap(), freq_response(b, w).unwrap());
        for (x, y) in ga.iter().zip(gb.iter()) {
            worst = worst.max((x - y).norm() / (1.0 + y.norm()));
        }
    }
    worst
}

#[test]
fn delta_and_controller_loops_commute() {
    let mut g = rng(21);
    for _ in 0..10 {
        let r = random_lfr(&mut g, 4, 2, false);
        let freqs: Vec<f64> = (0..10).map(|_| 10f64.powf(g.random_range(-2.0..2.0))).collect();
        let first = close_controller(&instantiate_delta(&r.model, &r.sample).unwrap(), &r.template, &r.k).unwrap();

        // controller first: move K ports ahead of the delta ports
        let nd = r.model.delta.total_dim();
        let (nu, ny) = (r.model.n_u, r.model.n_y);
        let m = &r.model.m;
        let ins: Vec<usize> = (nd..nd + nu).chain(0..nd).chain(nd + nu..m.n_inputs()).collect();
        let outs: Vec<usize> = (nd..nd + ny).chain(0..nd).chain(nd + ny..m.n_outputs()).collect();
        let k_first = close_controller(&permute(m, &ins, &outs), &r.template, &r.k).unwrap();
        let model = LfrModel::new(k_first, r.model.delta.clone(), 0, 0, r.model.channels.clone()).unwrap();
        let second = instantiate_delta(&model, &r.sample).unwrap();
        assert!(max_gap(&first, &second, &freqs) <= 1e-10);
    }
}

#[test]
fn repeated_block_equals_expanded_delta() {
    let mut g = rng(22);
    let r = random_lfr(&mut g, 5, 1, false);
    let expanded = DeltaStructure::new(vec![("a1", 1), ("a2", 1), ("b", 1)]).unwrap();
    let flat = LfrModel::new(r.model.m.clone(), expanded, r.model.n_u, r.model.n_y, r.model.channels.clone()).unwrap();
    let s = &r.sample;
    let a = instantiate_delta(&r.model, s).unwrap();
    let b = instantiate_delta(&flat, &[s[0], s[0], s[1]]).unwrap();
    assert!(max_gap(&a, &b, &[0.0, 0.1, 1.0, 10.0]) <= 1e-12);
}

#[test]
fn zero_delta_deletes_the_ports() {
    let mut g = rng(23);
    let r = random_lfr(&mut g, 3, 1, false);
    let nd = r.model.delta.total_dim();
    let m = &r.model.m;
    let kept = permute(m, &(nd..m.n_inputs()).collect::<Vec<_>>(), &(nd..m.n_outputs()).collect::<Vec<_>>());
    let inst = instantiate_delta(&r.model, &[0.0, 0.0]).unwrap();
    let freqs: Vec<f64> = (0..5).map(|_| g.random_range(0.01..20.0)).collect();
    assert!(max_gap(&inst, &kept, &freqs) <= 1e-12);
}

#[test]
fn model_file_round_trip_is_exact() {
    let mut g = rng(24);
    let r = random_lfr(&mut g, 3, 2, false);
    let text = ModelFile::new(&r.model, Some(&r.template)).to_json().unwrap();
    let back = ModelFile::from_json(&text).unwrap();
    assert_eq!(back.model().unwrap(), r.model);
    assert_eq!(back.template.as_ref(), Some(&r.template));
}

#[test]
fn ragged_model_names_field() {
    let text = r#"{"delta": [], "n_u": 0, "n_y": 0,
        "m": {"a": [[-1.0, 0.0], [0.0]], "b": [[1.0], [1.0]], "c": [[1.0, 1.0]], "d": [[0.0]]},
        "channels": {"inputs": [{"name": "w", "offset": 0, "width": 1}], "outputs": [{"name": "z", "offset": 0, "width": 1}]}}"#;
    let err = ModelFile::from_json(text).unwrap().model().unwrap_err().to_string();
    assert!(err.contains("m.a") && err.contains("row 1"), "{err}");
    let _ = ChannelTable::default();
}
