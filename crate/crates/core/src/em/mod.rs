//! Mini-batch expectation maximization over the latent point mask.
//!
//! The E-step turns per-view network outputs into repeatability `r`, local
//! maxima `ŷ`, margins `h` and a posterior `p` over the reduced sample space.
//! The M-step hands frozen `p` to [`detector_gradient_coefficients`] and
//! [`descriptor_gradient_coefficients`], whose outputs feed
//! [`crate::model::backward`].

pub mod check;
mod counts;
pub mod train;

pub use counts::{
    exact_count_sample_space, feasible_sizes, ln_binomial, log_count_sample_space, log_sum_exp,
    SampleSpaceCounts, EXACT_COUNT_LIMIT,
};
pub use train::{log_to_csv, train, TrainConfig, TrainLogRow, TrainOutcome};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::properties::{
    clamp_prob, discriminability_margins, discriminability_margins_backward, discriminability_prob,
    log_likelihood_item, repeatability, PropertyConfig, SceneBatch,
};

/// Strict local maxima of `r` over the Chebyshev neighbourhood of radius
/// `rad`. Non-finite entries are never selected and never block a neighbour.
pub fn select_local_maxima(r: &Grid<f64>, rad: usize) -> Grid<bool> {
    Grid::from_fn(r.width(), r.height(), |x, y| {
        let v = *r.get(x, y);
        v.is_finite() && r.neighbours(x, y, rad).all(|k| {
            let n = r.as_slice()[k];
            !n.is_finite() || v > n
        })
    })
}

/// Posterior that point `i` is an interest point, given it lies on `ŷ`.
pub fn approximate_posterior(r: f64, c_tilde: f64, counts: &SampleSpaceCounts, on_yhat: bool) -> f64 {
    if !on_yhat {
        return 0.0;
    }
    let r = clamp_prob(r);
    let a = r.ln() + c_tilde.ln() + counts.log_with_point;
    let b = (1.0 - r).ln() + counts.log_without_point;
    if b == f64::NEG_INFINITY {
        return 1.0;
    }
    let z = a - b;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// E-step result for one scene. Grids are indexed by canonical pixel.
#[derive(Clone, Debug)]
pub struct LatentState {
    /// Points visible in at least two views.
    pub participating: Grid<bool>,
    /// Repeatability; zero where the point does not participate.
    pub r: Grid<f64>,
    pub yhat: Grid<bool>,
    /// Pixel indices with `ŷ = 1`, ascending.
    pub selected: Vec<usize>,
    /// Margins and discriminability probabilities aligned with `selected`.
    pub h: Vec<f64>,
    pub c_tilde: Vec<f64>,
    pub p: Grid<f64>,
    pub counts: SampleSpaceCounts,
    pub expected_log_likelihood: f64,
}

impl LatentState {
    pub fn num_selected(&self) -> usize {
        self.selected.len()
    }
}

/// Runs the E-step for one scene.
pub fn e_step_scene(scene: &SceneBatch<'_>, cfg: &PropertyConfig) -> Result<LatentState> {
    let corr = scene.correspondence;
    let (w, h) = (corr.width(), corr.height());
    let participating = Grid::from_fn(w, h, |x, y| corr.participates(y * w + x));
    let mut r = Grid::filled(w, h, 0.0);
    let mut masked = Grid::filled(w, h, f64::NEG_INFINITY);
    for i in participating.true_indices() {
        let vals: Vec<f64> = (0..scene.views()).filter_map(|j| scene.prob(i, j)).collect();
        let ri = repeatability(&vals)?;
        r.as_mut_slice()[i] = ri;
        masked.as_mut_slice()[i] = ri;
    }
    let yhat = select_local_maxima(&masked, cfg.rad);
    let selected = yhat.true_indices();
    let counts = log_count_sample_space(selected.len(), cfg.n_min, cfg.n_max)?;
    let margins = discriminability_margins(&selected, scene, cfg)?;
    let c_tilde: Vec<f64> = margins.iter().map(|&hv| discriminability_prob(hv, cfg)).collect();

    let mut p = Grid::filled(w, h, 0.0);
    for (k, &i) in selected.iter().enumerate() {
        p.as_mut_slice()[i] = approximate_posterior(r.as_slice()[i], c_tilde[k], &counts, true);
    }
    let h_max = cfg.h_max();
    let mut margin_of = vec![h_max; w * h];
    for (k, &i) in selected.iter().enumerate() {
        margin_of[i] = margins[k];
    }
    let expected_log_likelihood = participating
        .true_indices()
        .into_iter()
        .map(|i| log_likelihood_item(p.as_slice()[i], r.as_slice()[i], margin_of[i], cfg))
        .sum();

    Ok(LatentState {
        participating,
        r,
        yhat,
        selected,
        h: margins,
        c_tilde,
        p,
        counts,
        expected_log_likelihood,
    })
}

/// E-step over a batch. Scenes whose reduced space is empty (or which have
/// fewer than two maxima) come back as `None` and are left out of the sum.
pub fn e_step(scenes: &[SceneBatch<'_>], cfg: &PropertyConfig) -> Result<(Vec<Option<LatentState>>, f64)> {
    let results: Vec<Result<LatentState>> = scenes.par_iter().map(|s| e_step_scene(s, cfg)).collect();
    let mut states = Vec::with_capacity(results.len());
    let mut total = 0.0;
    for (k, res) in results.into_iter().enumerate() {
        match res {
            Ok(st) => {
                total += st.expected_log_likelihood;
                states.push(Some(st));
            }
            Err(e @ (Error::EmptySpace { .. } | Error::DegenerateSet(_))) => {
                log::warn!("skipping scene {k}: {e}");
                states.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((states, total))
}

/// Ascent gradient of the detector term with respect to every view's
/// probability map: `(p − r) / (J_i r (1 − r))` at each corresponding pixel,
/// where `J_i` counts the views that see point `i`.
pub fn detector_gradient_coefficients(state: &LatentState, scene: &SceneBatch<'_>) -> Vec<Vec<f64>> {
    let corr = scene.correspondence;
    let mut grads: Vec<Vec<f64>> = scene
        .outputs
        .iter()
        .map(|o| vec![0.0; o.width() * o.height()])
        .collect();
    for i in state.participating.true_indices() {
        let r = clamp_prob(state.r.as_slice()[i]);
        let p = state.p.as_slice()[i];
        let ji = corr.valid_views(i) as f64;
        let coef = (p - r) / (ji * r * (1.0 - r));
        for (j, g) in grads.iter_mut().enumerate() {
            if let Some(px) = corr.pixel(i, j) {
                g[px] += coef;
            }
        }
    }
    grads
}

/// Ascent gradient of `Σ_i α p_i h_i` with respect to every view's
/// descriptor field.
pub fn descriptor_gradient_coefficients(
    state: &LatentState,
    scene: &SceneBatch<'_>,
    cfg: &PropertyConfig,
) -> Result<Vec<Vec<f64>>> {
    let weights: Vec<f64> = state
        .selected
        .iter()
        .map(|&i| cfg.alpha * state.p.as_slice()[i])
        .collect();
    discriminability_margins_backward(&state.selected, &weights, scene, cfg)
}
