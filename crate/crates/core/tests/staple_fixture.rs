//! Pins the whole STAPLE loop, not just its fixed point: two
//! expectation-maximization iterations on an 8-voxel line with three
//! raters, compared against `fixtures/staple_fixture_expected.json` frozen
//! from the reference run in `fixtures/staple_fixture_oracle.py`.

use fusemetrics::fusion::{staple_binary, PriorMode, RaterStack, StapleParams};
use fusemetrics::volume::{BinaryMask, ImageGeometry};
use serde_json::Value;

const TOLERANCE: f64 = 1e-10;

#[test]
fn two_iteration_run_matches_the_frozen_reference() {
    let exp: Value =
        serde_json::from_str(include_str!("fixtures/staple_fixture_expected.json")).unwrap();
    let g = ImageGeometry::axis_aligned([8, 1, 1], [1.0; 3]).unwrap();
    let raters: Vec<BinaryMask> = exp["dissent_voxels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| {
            let dissent = d.as_u64().unwrap() as usize;
            let voxels = (0..8).map(|i| i != dissent).collect();
            BinaryMask::new(g.clone(), voxels).unwrap()
        })
        .collect();
    let stack = RaterStack::new(raters).unwrap();
    let params = StapleParams {
        max_iterations: 2,
        tolerance: 1e-30,
        prior: PriorMode::SampleMean,
        ..StapleParams::default()
    };
    let (consensus, state) = staple_binary(&stack, &params).unwrap();

    assert_eq!(state.iterations, 2);
    assert!(!state.converged);
    assert!(!state.degenerate);

    let floats = |key: &str| -> Vec<f64> {
        exp[key]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect()
    };
    let check = |got: &[f64], want: &[f64], what: &str| {
        assert_eq!(got.len(), want.len(), "{what} length");
        for (i, (g, w)) in got.iter().zip(want).enumerate() {
            assert!(
                (g - w).abs() <= TOLERANCE,
                "{what}[{i}]: got {g}, expected {w}"
            );
        }
    };
    check(&state.sensitivities, &floats("sensitivities"), "p");
    check(&state.specificities, &floats("specificities"), "q");
    check(&state.posterior.voxels, &floats("posterior"), "posterior");
    check(&state.log_likelihood, &floats("log_likelihood"), "log likelihood");

    let want_consensus: Vec<bool> = exp["consensus"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_bool().unwrap())
        .collect();
    assert_eq!(consensus.voxels, want_consensus);
}
