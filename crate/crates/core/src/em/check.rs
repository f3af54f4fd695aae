//! Finite-difference checks of the M-step gradients with `p` frozen.

use super::{descriptor_gradient_coefficients, detector_gradient_coefficients, LatentState};
use crate::error::Result;
use crate::image::Image;
use crate::model::{self, ModelOutput, ModelParams};
use crate::properties::{clamp_prob, discriminability_margins, Correspondence, PropertyConfig, SceneBatch};

/// Which part of the frozen objective to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// `Σ_i p_i log r_i + (1 − p_i) log(1 − r_i)`.
    Detector,
    /// `Σ_{i ∈ ŷ} α p_i h_i`.
    Descriptor,
}

/// Value of the frozen objective for fresh `outputs`, keeping `state.p` and
/// `state.selected` fixed.
pub fn frozen_objective(
    objective: Objective,
    state: &LatentState,
    outputs: &[ModelOutput],
    correspondence: &Correspondence,
    cfg: &PropertyConfig,
) -> Result<f64> {
    let scene = SceneBatch::new(outputs, correspondence)?;
    match objective {
        Objective::Detector => Ok(state
            .participating
            .true_indices()
            .into_iter()
            .map(|i| {
                let vals: Vec<f64> = (0..scene.views()).filter_map(|j| scene.prob(i, j)).collect();
                let r = clamp_prob(vals.iter().sum::<f64>() / vals.len() as f64);
                let p = state.p.as_slice()[i];
                p * r.ln() + (1.0 - p) * (1.0 - r).ln()
            })
            .sum()),
        Objective::Descriptor => {
            let h = discriminability_margins(&state.selected, &scene, cfg)?;
            Ok(state
                .selected
                .iter()
                .zip(&h)
                .map(|(&i, hv)| cfg.alpha * state.p.as_slice()[i] * hv)
                .sum())
        }
    }
}

/// Analytic gradient of the frozen objective with respect to every scalar.
pub fn analytic_gradient(
    objective: Objective,
    params: &ModelParams,
    state: &LatentState,
    outputs: &[ModelOutput],
    correspondence: &Correspondence,
    cfg: &PropertyConfig,
) -> Result<ModelParams> {
    let scene = SceneBatch::new(outputs, correspondence)?;
    let mut total = ModelParams::zeros(params.topology());
    match objective {
        Objective::Detector => {
            for (out, g) in outputs.iter().zip(detector_gradient_coefficients(state, &scene)) {
                total.add_assign(&model::backward(params, out, Some(&g), None)?);
            }
        }
        Objective::Descriptor => {
            for (out, g) in outputs
                .iter()
                .zip(descriptor_gradient_coefficients(state, &scene, cfg)?)
            {
                total.add_assign(&model::backward(params, out, None, Some(&g))?);
            }
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientSample {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientSample {
    /// `|a − n| / max(|a|, |n|, floor)`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

/// Compares the analytic gradient with central differences at the given
/// scalar indices.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check(
    objective: Objective,
    params: &ModelParams,
    images: &[Image],
    correspondence: &Correspondence,
    state: &LatentState,
    cfg: &PropertyConfig,
    indices: &[usize],
    step: f64,
) -> Result<Vec<GradientSample>> {
    let outputs = images
        .iter()
        .map(|im| model::forward(params, im))
        .collect::<Result<Vec<_>>>()?;
    let grad = analytic_gradient(objective, params, state, &outputs, correspondence, cfg)?;
    let eval = |p: &ModelParams| -> Result<f64> {
        let outs = images
            .iter()
            .map(|im| model::forward(p, im))
            .collect::<Result<Vec<_>>>()?;
        frozen_objective(objective, state, &outs, correspondence, cfg)
    };
    let mut probe = params.clone();
    indices
        .iter()
        .map(|&k| {
            let orig = probe.scalar(k);
            *probe.scalar_mut(k) = orig + step;
            let up = eval(&probe)?;
            *probe.scalar_mut(k) = orig - step;
            let down = eval(&probe)?;
            *probe.scalar_mut(k) = orig;
            Ok(GradientSample {
                index: k,
                analytic: grad.scalar(k),
                numeric: (up - down) / (2.0 * step),
            })
        })
        .collect()
}

/// A tiny scene for gradient checks: three noisy renderings of one 8×8
/// two-channel image seen through the identity map, with the first row
/// hidden from the last view.
#[derive(Clone, Debug)]
pub struct ToyScene {
    pub params: ModelParams,
    pub images: Vec<Image>,
    pub correspondence: Correspondence,
    pub outputs: Vec<ModelOutput>,
    pub state: LatentState,
}

/// Property configuration matching [`toy_scene`]'s scale.
pub fn toy_properties() -> PropertyConfig {
    PropertyConfig {
        rad: 1,
        n_min: 0,
        n_max: 12,
        m_p: 0.9,
        m_n: -0.2,
        lambda: 10.0 / 12.0,
        alpha: 1.0,
    }
}

pub fn toy_scene(seed: u64, cfg: &PropertyConfig) -> Result<ToyScene> {
    use rand::{Rng, SeedableRng};
    let noise = |s: u64| {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
        Image::from_fn(8, 8, 2, |_, _, _| rng.random())
    };
    let params = ModelParams::init(seed, 2, 4)?;
    let base = noise(seed ^ 0xabc);
    let images: Vec<Image> = (0..3)
        .map(|j| {
            let n = noise(seed.wrapping_mul(31).wrapping_add(j));
            Image::from_fn(8, 8, 2, |c, x, y| 0.8 * base.get(c, x, y) + 0.2 * n.get(c, x, y))
        })
        .collect();
    let target = (0..64u32)
        .flat_map(|i| (0..3).map(move |j| if j == 2 && i < 8 { None } else { Some(i) }))
        .collect();
    let correspondence = Correspondence::new(8, 8, 3, target)?;
    let outputs = images
        .iter()
        .map(|im| model::forward(&params, im))
        .collect::<Result<Vec<_>>>()?;
    let state = super::e_step_scene(&SceneBatch::new(&outputs, &correspondence)?, cfg)?;
    Ok(ToyScene {
        params,
        images,
        correspondence,
        outputs,
        state,
    })
}
