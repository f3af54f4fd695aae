use pointprops::em::check::{finite_difference_check, toy_properties, toy_scene, Objective};

fn worst(objective: Objective, seed: u64) -> (f64, usize) {
    let cfg = toy_properties();
    let s = toy_scene(seed, &cfg).unwrap();
    let n = s.params.num_scalars();
    let indices: Vec<usize> = (0..n).step_by(n / 120).collect();
    let samples = finite_difference_check(
        objective,
        &s.params,
        &s.images,
        &s.correspondence,
        &s.state,
        &cfg,
        &indices,
        1e-5,
    )
    .unwrap();
    let w = samples.iter().map(|g| g.relative_error(1e-6)).fold(0.0, f64::max);
    let nonzero = samples.iter().filter(|g| g.analytic.abs() > 1e-6).count();
    assert!(nonzero >= samples.len() / 4, "only {nonzero} informative samples");
    (w, samples.len())
}

#[test]
fn detector_chain_matches_finite_differences() {
    for seed in [1, 2, 3] {
        let (w, n) = worst(Objective::Detector, seed);
        assert!(n >= 100);
        assert!(w <= 1e-4, "seed {seed}: worst relative error {w}");
    }
}

#[test]
fn descriptor_chain_matches_finite_differences() {
    for seed in [1, 2, 3] {
        let (w, n) = worst(Objective::Descriptor, seed);
        assert!(n >= 100);
        assert!(w <= 1e-4, "seed {seed}: worst relative error {w}");
    }
}
