//! Property probabilities of candidate interest points: sparsity,
//! repeatability and discriminability, and the per-point latent
//! log-likelihood item.
//!
//! Canonical points are the pixels of the untransformed scene image; a
//! [`Correspondence`] records where each one lands in every transformed view.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::ModelOutput;

/// Clamp applied to repeatability before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Tolerance on descriptor norms accepted by [`similarity`].
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropertyConfig {
    /// Chebyshev radius of the sparsity neighbourhood, in pixels.
    pub rad: usize,
    pub n_min: usize,
    pub n_max: usize,
    /// Positive margin.
    pub m_p: f64,
    /// Negative margin.
    pub m_n: f64,
    /// Negative pair weight.
    pub lambda: f64,
    /// Discriminability sensitivity.
    pub alpha: f64,
}

impl PropertyConfig {
    /// Training values: rad 4, 200 < n < 400, m_p 1, m_n 0.2, λ = 10/N_max,
    /// α 1.
    pub fn training_defaults() -> Self {
        Self::with_range(200, 400)
    }

    /// Default margins with a custom count range and λ = 10/N_max.
    pub fn with_range(n_min: usize, n_max: usize) -> Self {
        Self {
            rad: 4,
            n_min,
            n_max,
            m_p: 1.0,
            m_n: 0.2,
            lambda: 10.0 / n_max as f64,
            alpha: 1.0,
        }
    }

    /// Maximum attainable margin `H = m_p − λ·m_n`.
    pub fn h_max(&self) -> f64 {
        self.m_p - self.lambda * self.m_n
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.rad < 1 {
            return fail("rad must be at least 1".into());
        }
        if self.n_min >= self.n_max {
            return fail(format!("N_min ({}) must be below N_max ({})", self.n_min, self.n_max));
        }
        let unit = -1.0..=1.0;
        if !unit.contains(&self.m_p) || !unit.contains(&self.m_n) {
            return fail("margins must lie in [-1, 1]".into());
        }
        if self.m_n >= self.m_p {
            return fail(format!("m_n ({}) must be below m_p ({})", self.m_n, self.m_p));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be finite and non-negative".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail("alpha must be positive".into());
        }
        Ok(())
    }
}

/// For each canonical point and view, the pixel of that view it maps to.
#[derive(Clone, Debug, PartialEq)]
pub struct Correspondence {
    width: usize,
    height: usize,
    views: usize,
    target: Vec<Option<u32>>,
}

impl Correspondence {
    /// `target[i * views + j]` is the pixel of point `i` in view `j`.
    pub fn new(width: usize, height: usize, views: usize, target: Vec<Option<u32>>) -> Result<Self> {
        if target.len() != width * height * views {
            return Err(Error::Shape(format!(
                "correspondence table has {} entries, expected {}",
                target.len(),
                width * height * views
            )));
        }
        Ok(Self {
            width,
            height,
            views,
            target,
        })
    }

    /// Every view is an unmodified copy of the canonical grid.
    pub fn identity(width: usize, height: usize, views: usize) -> Self {
        let target = (0..width * height)
            .flat_map(|i| std::iter::repeat_n(Some(i as u32), views))
            .collect();
        Self {
            width,
            height,
            views,
            target,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_points(&self) -> usize {
        self.width * self.height
    }

    pub fn views(&self) -> usize {
        self.views
    }

    #[inline]
    pub fn pixel(&self, point: usize, view: usize) -> Option<usize> {
        self.target[point * self.views + view].map(|p| p as usize)
    }

    pub fn valid_views(&self, point: usize) -> usize {
        self.target[point * self.views..(point + 1) * self.views]
            .iter()
            .filter(|t| t.is_some())
            .count()
    }

    /// Points seen in at least two views take part in the objective.
    pub fn participates(&self, point: usize) -> bool {
        self.valid_views(point) >= 2
    }
}

/// The transformed views of one scene with their network outputs.
#[derive(Clone, Copy, Debug)]
pub struct SceneBatch<'a> {
    pub outputs: &'a [ModelOutput],
    pub correspondence: &'a Correspondence,
}

impl<'a> SceneBatch<'a> {
    pub fn new(outputs: &'a [ModelOutput], correspondence: &'a Correspondence) -> Result<Self> {
        if outputs.len() != correspondence.views() {
            return Err(Error::Shape(format!(
                "{} outputs for {} views",
                outputs.len(),
                correspondence.views()
            )));
        }
        if outputs.len() < 2 {
            return Err(Error::InvalidConfig("a scene needs at least two views".into()));
        }
        let d = outputs[0].desc_len();
        if outputs.iter().any(|o| o.desc_len() != d) {
            return Err(Error::Shape("views disagree on descriptor length".into()));
        }
        Ok(Self {
            outputs,
            correspondence,
        })
    }

    pub fn views(&self) -> usize {
        self.outputs.len()
    }

    pub fn desc(&self, point: usize, view: usize) -> Option<&'a [f64]> {
        self.correspondence
            .pixel(point, view)
            .map(|px| self.outputs[view].desc(px))
    }

    pub fn prob(&self, point: usize, view: usize) -> Option<f64> {
        self.correspondence
            .pixel(point, view)
            .map(|px| self.outputs[view].prob(px))
    }
}

/// Suppresses every selected point that has another selected point within
/// Chebyshev distance `rad`; `satisfied` is true when nothing was suppressed.
pub fn local_sparsity(y: &Grid<bool>, rad: usize) -> (Grid<bool>, bool) {
    let mut satisfied = true;
    let s = Grid::from_fn(y.width(), y.height(), |x, yy| {
        if !*y.get(x, yy) {
            return false;
        }
        let isolated = !y.neighbours(x, yy, rad).any(|k| y.as_slice()[k]);
        satisfied &= isolated;
        isolated
    });
    (s, satisfied)
}

/// 1 iff `N_min < n < N_max`.
pub fn count_sparsity(n: usize, cfg: &PropertyConfig) -> bool {
    cfg.n_min < n && n < cfg.n_max
}

/// Mean detection probability over the views where the point is visible.
pub fn repeatability(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidPoint);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn point_repeatability(scene: &SceneBatch<'_>, point: usize) -> Result<f64> {
    let vals: Vec<f64> = (0..scene.views()).filter_map(|j| scene.prob(point, j)).collect();
    repeatability(&vals)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner product of two unit descriptors, clamped to `[-1, 1]`.
pub fn similarity(d1: &[f64], d2: &[f64]) -> Result<f64> {
    if d1.len() != d2.len() {
        return Err(Error::Shape("descriptor lengths differ".into()));
    }
    for d in [d1, d2] {
        let n = dot(d, d).sqrt();
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!("descriptor norm {n} is not 1")));
        }
    }
    Ok(dot(d1, d2).clamp(-1.0, 1.0))
}

/// Margin `h_i` of one selected point against the other selected points.
///
/// Averages, over ordered view pairs `(j, j')` where the point is visible in
/// both, `min(m_p, sim(d_ij, d_ij')) − λ/n_j' · Σ max(m_n, sim(d_ij, d_i'j'))`
/// with the sum over other selected points visible in `j'` and `n_j'` the
/// number of selected points visible in `j'`.
pub fn discriminability_margin(
    point: usize,
    selected: &[usize],
    scene: &SceneBatch<'_>,
    cfg: &PropertyConfig,
) -> Result<f64> {
    if selected.len() < 2 {
        return Err(Error::DegenerateSet(format!(
            "discriminability needs at least 2 selected points, got {}",
            selected.len()
        )));
    }
    if !selected.contains(&point) {
        return Err(Error::Contract(format!("point {point} is not selected")));
    }
    let views = scene.views();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for j in 0..views {
        let Some(anchor) = scene.desc(point, j) else { continue };
        for jp in (0..views).filter(|&jp| jp != j) {
            let Some(positive) = scene.desc(point, jp) else { continue };
            let mut n_visible = 0usize;
            let mut neg = 0.0;
            for &other in selected {
                let Some(dn) = scene.desc(other, jp) else { continue };
                n_visible += 1;
                if other != point {
                    neg += dot(anchor, dn).clamp(-1.0, 1.0).max(cfg.m_n);
                }
            }
            let pos = dot(anchor, positive).clamp(-1.0, 1.0).min(cfg.m_p);
            total += pos - cfg.lambda / n_visible as f64 * neg;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::InvalidPoint);
    }
    Ok(total / pairs as f64)
}

struct SelectedViews<'a> {
    /// Per view: `(index into selected, descriptor)` for visible points.
    visible: Vec<Vec<(usize, &'a [f64])>>,
    /// Per selected point, per view: descriptor if visible.
    lookup: Vec<Vec<Option<&'a [f64]>>>,
}

fn gather<'a>(selected: &[usize], scene: &SceneBatch<'a>) -> SelectedViews<'a> {
    let views = scene.views();
    let mut visible = vec![Vec::new(); views];
    let mut lookup = Vec::with_capacity(selected.len());
    for (a, &i) in selected.iter().enumerate() {
        let row: Vec<Option<&[f64]>> = (0..views).map(|j| scene.desc(i, j)).collect();
        for (j, d) in row.iter().enumerate() {
            if let Some(d) = d {
                visible[j].push((a, *d));
            }
        }
        lookup.push(row);
    }
    SelectedViews { visible, lookup }
}

/// [`discriminability_margin`] for every selected point at once.
pub fn discriminability_margins(
    selected: &[usize],
    scene: &SceneBatch<'_>,
    cfg: &PropertyConfig,
) -> Result<Vec<f64>> {
    if selected.len() < 2 {
        return Err(Error::DegenerateSet(format!(
            "discriminability needs at least 2 selected points, got {}",
            selected.len()
        )));
    }
    let views = scene.views();
    let sv = gather(selected, scene);
    let mut h = vec![0.0; selected.len()];
    let mut pairs = vec![0usize; selected.len()];
    for j in 0..views {
        for jp in (0..views).filter(|&jp| jp != j) {
            let others = &sv.visible[jp];
            let weight = cfg.lambda / others.len().max(1) as f64;
            for &(a, anchor) in &sv.visible[j] {
                let Some(positive) = sv.lookup[a][jp] else { continue };
                let pos = dot(anchor, positive).clamp(-1.0, 1.0).min(cfg.m_p);
                let neg: f64 = others
                    .iter()
                    .filter(|(b, _)| *b != a)
                    .map(|(_, dn)| dot(anchor, dn).clamp(-1.0, 1.0).max(cfg.m_n))
                    .sum();
                h[a] += pos - weight * neg;
                pairs[a] += 1;
            }
        }
    }
    for (hv, &p) in h.iter_mut().zip(&pairs) {
        if p == 0 {
            return Err(Error::InvalidPoint);
        }
        *hv /= p as f64;
    }
    Ok(h)
}

/// Gradient of `Σ_a weights[a] · h_a` with respect to every view's
/// descriptor field (pixel-major, one buffer per view).
///
/// Hinges pass the gradient when active, including at equality
/// (`sim ≤ m_p` for positives, `sim ≥ m_n` for negatives), and block it when
/// clipped. The `[-1, 1]` clamp on similarities is treated as identity.
pub fn discriminability_margins_backward(
    selected: &[usize],
    weights: &[f64],
    scene: &SceneBatch<'_>,
    cfg: &PropertyConfig,
) -> Result<Vec<Vec<f64>>> {
    if weights.len() != selected.len() {
        return Err(Error::Shape("one weight per selected point required".into()));
    }
    let views = scene.views();
    let d = scene.outputs[0].desc_len();
    let mut grads: Vec<Vec<f64>> = scene
        .outputs
        .iter()
        .map(|o| vec![0.0; o.width() * o.height() * d])
        .collect();
    if selected.len() < 2 || weights.iter().all(|&w| w == 0.0) {
        return Ok(grads);
    }
    let corr = scene.correspondence;
    let sv = gather(selected, scene);
    let pixels: Vec<Vec<Option<usize>>> = selected
        .iter()
        .map(|&i| (0..views).map(|j| corr.pixel(i, j)).collect())
        .collect();
    let pair_counts: Vec<usize> = pixels
        .iter()
        .map(|row| {
            let k = row.iter().filter(|p| p.is_some()).count();
            k * k.saturating_sub(1)
        })
        .collect();

    let axpy = |dst: &mut [f64], s: f64, x: &[f64]| {
        for (a, b) in dst.iter_mut().zip(x) {
            *a += s * b;
        }
    };

    for j in 0..views {
        for jp in (0..views).filter(|&jp| jp != j) {
            let others = &sv.visible[jp];
            let weight = cfg.lambda / others.len().max(1) as f64;
            for &(a, anchor) in &sv.visible[j] {
                let Some(positive) = sv.lookup[a][jp] else { continue };
                if weights[a] == 0.0 {
                    continue;
                }
                let c = weights[a] / pair_counts[a] as f64;
                let px_a_j = pixels[a][j].expect("visible");
                let px_a_jp = pixels[a][jp].expect("visible");
                let mut g_anchor = vec![0.0; d];
                if dot(anchor, positive) <= cfg.m_p {
                    axpy(&mut g_anchor, c, positive);
                    axpy(&mut grads[jp][px_a_jp * d..(px_a_jp + 1) * d], c, anchor);
                }
                for &(b, dn) in others {
                    if b == a || dot(anchor, dn) < cfg.m_n {
                        continue;
                    }
                    let px_b = pixels[b][jp].expect("visible");
                    axpy(&mut g_anchor, -c * weight, dn);
                    axpy(&mut grads[jp][px_b * d..(px_b + 1) * d], -c * weight, anchor);
                }
                axpy(&mut grads[j][px_a_j * d..(px_a_j + 1) * d], 1.0, &g_anchor);
            }
        }
    }
    Ok(grads)
}

/// `exp(α (h − H))`, with `h` capped at `H`.
pub fn discriminability_prob(h: f64, cfg: &PropertyConfig) -> f64 {
    (cfg.alpha * (h - cfg.h_max()).min(0.0)).exp()
}

pub fn clamp_prob(r: f64) -> f64 {
    r.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `p log r + (1 − p) log(1 − r) + α p (h − H)`; with `p ∈ {0, 1}` this is
/// the log-likelihood item itself, otherwise its expectation.
pub fn log_likelihood_item(p: f64, r: f64, h: f64, cfg: &PropertyConfig) -> f64 {
    let r = clamp_prob(r);
    let mut v = (1.0 - p) * (1.0 - r).ln();
    if p != 0.0 {
        v += p * r.ln() + cfg.alpha * p * (h - cfg.h_max());
    }
    v
}
