//! The E-step on small scenes against brute-force enumeration of the same
//! reduced sample space.

use pointprops::em::e_step_scene;
use pointprops::model::ModelOutput;
use pointprops::oracle::{enumerate_reduced_space, exact_expectation, exact_posterior, Margins, TinyInstance};
use pointprops::properties::{log_likelihood_item, Correspondence, PropertyConfig, SceneBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scene(rng: &mut ChaCha8Rng, w: usize, h: usize, views: usize, d: usize) -> (Vec<ModelOutput>, Correspondence) {
    let n = w * h;
    let outs = (0..views)
        .map(|_| {
            let prob: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
            let mut desc = Vec::with_capacity(n * d);
            for _ in 0..n {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                desc.extend(v.iter().map(|x| x / norm));
            }
            ModelOutput::from_maps(w, h, d, prob, desc).unwrap()
        })
        .collect();
    (outs, Correspondence::identity(w, h, views))
}

#[test]
fn e_step_agrees_with_enumeration_up_to_the_average_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    let mut worst_p: f64 = 0.0;
    while checked < 20 {
        let (outs, corr) = random_scene(&mut rng, 8, 8, 3, 4);
        let scene = SceneBatch::new(&outs, &corr).unwrap();
        let cfg = PropertyConfig {
            rad: 2,
            ..PropertyConfig::with_range(rng.random_range(0..3), rng.random_range(5..12))
        };
        let Ok(state) = e_step_scene(&scene, &cfg) else { continue };
        if state.selected.len() > 12 {
            continue;
        }
        checked += 1;
        let r: Vec<f64> = state.selected.iter().map(|&i| state.r.as_slice()[i]).collect();
        let inst = TinyInstance {
            r: r.clone(),
            margins: Margins::Constant(state.h.clone()),
            n_min: cfg.n_min,
            n_max: cfg.n_max,
            alpha: cfg.alpha,
            h_max: cfg.h_max(),
            rad: cfg.rad,
            coords: state.selected.iter().map(|&i| ((i % 8) as i64, (i / 8) as i64)).collect(),
        };
        let space = enumerate_reduced_space(&inst, &vec![true; r.len()]).unwrap();
        let exact = exact_posterior(&inst, &space).unwrap();

        // E is linear in p, so swapping in the exact posterior shifts it by
        // Σ Δp · (ln r − ln(1 − r) + α(h − H)). Points off ŷ contribute
        // ln(1 − r) on both sides.
        let mut predicted = state.expected_log_likelihood;
        for (k, &i) in state.selected.iter().enumerate() {
            let p = state.p.as_slice()[i];
            let coef = r[k].ln() - (1.0 - r[k]).ln() + cfg.alpha * (state.h[k] - cfg.h_max());
            predicted += (exact[k] - p) * coef;
            worst_p = worst_p.max((exact[k] - p).abs());
        }
        let off_yhat: f64 = state
            .participating
            .true_indices()
            .into_iter()
            .filter(|&i| !state.yhat.as_slice()[i])
            .map(|i| log_likelihood_item(0.0, state.r.as_slice()[i], cfg.h_max(), &cfg))
            .sum();
        let oracle_e = exact_expectation(&inst, &space).unwrap() + off_yhat;
        assert!((predicted - oracle_e).abs() <= 1e-9 * oracle_e.abs().max(1.0), "{predicted} vs {oracle_e}");
        for (i, &p) in state.p.as_slice().iter().enumerate() {
            if !state.yhat.as_slice()[i] {
                assert_eq!(p, 0.0);
            }
        }
    }
    assert!(worst_p < 1.0);
}
