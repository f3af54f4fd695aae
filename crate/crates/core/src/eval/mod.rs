//! Evaluation: point extraction, mutual nearest-neighbour matching, the
//! matching score, homography estimation error and visualization.

mod ransac;
mod render;

pub use ransac::{estimate_homography, fit_dlt, homography_error, PointPair, RansacConfig};
pub use render::{line_pixels, render_matches};

use crate::em::select_local_maxima;
use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::grid::Grid;
use crate::image::Image;
use crate::model::{self, ModelOutput, ModelParams};
use crate::properties::dot;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    /// Probability threshold for extracted points.
    pub pt: f64,
    /// NMS radius.
    pub rad: usize,
    pub max_k: usize,
    /// Correct-match distance in pixels.
    pub epsilon: f64,
    pub ransac: RansacConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pt: 0.5,
            rad: 4,
            max_k: 300,
            epsilon: 3.0,
            ransac: RansacConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pt > 0.0 && self.pt < 1.0) {
            return Err(Error::InvalidConfig(format!("Pt {} outside (0, 1)", self.pt)));
        }
        if self.rad == 0 {
            return Err(Error::InvalidConfig("NMS radius must be at least 1".into()));
        }
        if self.max_k == 0 {
            return Err(Error::InvalidConfig("maxK must be at least 1".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig(format!("epsilon {}", self.epsilon)));
        }
        self.ransac.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyPoint {
    pub x: usize,
    pub y: usize,
    pub score: f64,
    pub desc: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    pub points: Vec<KeyPoint>,
    pub width: usize,
    pub height: usize,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Strict NMS over the probability map, then `score > pt`, then the `max_k`
/// highest scores (ties in raster order).
pub fn extract_points(output: &ModelOutput, pt: f64, rad: usize, max_k: usize) -> PointSet {
    let (w, h) = (output.width(), output.height());
    let prob = Grid::from_vec(w, h, output.prob_map().to_vec());
    let peaks = select_local_maxima(&prob, rad);
    let mut kept: Vec<usize> = peaks
        .true_indices()
        .into_iter()
        .filter(|&i| output.prob(i) > pt)
        .collect();
    kept.sort_by(|&a, &b| output.prob(b).total_cmp(&output.prob(a)).then(a.cmp(&b)));
    kept.truncate(max_k);
    PointSet {
        points: kept
            .into_iter()
            .map(|i| KeyPoint {
                x: i % w,
                y: i / w,
                score: output.prob(i),
                desc: output.desc(i).to_vec(),
            })
            .collect(),
        width: w,
        height: h,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchSet {
    pub matches: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

/// Mutual nearest neighbours by descriptor similarity; ties go to the lower
/// index. Matches are ordered by their index in `a`.
pub fn match_two_way(a: &PointSet, b: &PointSet) -> MatchSet {
    if a.is_empty() || b.is_empty() {
        return MatchSet::default();
    }
    let (na, nb) = (a.len(), b.len());
    let sims: Vec<f64> = a
        .points
        .iter()
        .flat_map(|pa| b.points.iter().map(move |pb| dot(&pa.desc, &pb.desc)))
        .collect();
    let best_b: Vec<usize> = (0..na)
        .map(|i| argmax(sims[i * nb..(i + 1) * nb].iter().copied()).expect("nonempty"))
        .collect();
    let best_a: Vec<usize> = (0..nb)
        .map(|j| argmax((0..na).map(|i| sims[i * nb + j])).expect("nonempty"))
        .collect();
    MatchSet {
        matches: (0..na)
            .filter(|&i| best_a[best_b[i]] == i)
            .map(|i| Match {
                a: i,
                b: best_b[i],
                similarity: sims[i * nb + best_b[i]],
            })
            .collect(),
    }
}

fn in_bounds((x, y): (f64, f64), width: usize, height: usize) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64
}

fn distance(p: (f64, f64), x: usize, y: usize) -> f64 {
    ((p.0 - x as f64).powi(2) + (p.1 - y as f64).powi(2)).sqrt()
}

/// Per-match correctness in both directions plus the shared-region counts.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchCheck {
    /// `H(a)` lies within ε of `b`, with `a` inside the shared region.
    pub forward: Vec<bool>,
    /// `H⁻¹(b)` lies within ε of `a`, with `b` inside the shared region.
    pub backward: Vec<bool>,
    pub region_a: usize,
    pub region_b: usize,
}

pub fn check_matches(matches: &MatchSet, a: &PointSet, b: &PointSet, h_gt: &Homography, epsilon: f64) -> MatchCheck {
    let inv = h_gt.inverse();
    let fwd: Vec<Option<(f64, f64)>> = a
        .points
        .iter()
        .map(|p| h_gt.apply(p.x as f64, p.y as f64).filter(|&q| in_bounds(q, b.width, b.height)))
        .collect();
    let bwd: Vec<Option<(f64, f64)>> = b
        .points
        .iter()
        .map(|p| inv.apply(p.x as f64, p.y as f64).filter(|&q| in_bounds(q, a.width, a.height)))
        .collect();
    let forward = matches
        .matches
        .iter()
        .map(|m| fwd[m.a].is_some_and(|q| distance(q, b.points[m.b].x, b.points[m.b].y) <= epsilon))
        .collect();
    let backward = matches
        .matches
        .iter()
        .map(|m| bwd[m.b].is_some_and(|q| distance(q, a.points[m.a].x, a.points[m.a].y) <= epsilon))
        .collect();
    MatchCheck {
        forward,
        backward,
        region_a: fwd.iter().filter(|q| q.is_some()).count(),
        region_b: bwd.iter().filter(|q| q.is_some()).count(),
    }
}

/// `½ (correct₁₂ / |A ∩ region| + correct₂₁ / |B ∩ region|)`; a direction
/// with no points in the shared region contributes zero.
pub fn matching_score(matches: &MatchSet, a: &PointSet, b: &PointSet, h_gt: &Homography, epsilon: f64) -> f64 {
    let chk = check_matches(matches, a, b, h_gt, epsilon);
    let ratio = |flags: &[bool], n: usize, dir: &str| {
        if n == 0 {
            log::debug!("no points of {dir} inside the shared region");
            0.0
        } else {
            flags.iter().filter(|&&f| f).count() as f64 / n as f64
        }
    };
    0.5 * (ratio(&chk.forward, chk.region_a, "A") + ratio(&chk.backward, chk.region_b, "B"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairMetrics {
    pub m_score: f64,
    pub homography_error: f64,
    pub he: bool,
    pub num_points_a: usize,
    pub num_points_b: usize,
    pub num_matches: usize,
    pub estimate: Option<Homography>,
}

impl PairMetrics {
    pub const CSV_HEADER: &'static str = "pair_id,m_score,homo_error,HE,num_points_A,num_points_B,num_matches";

    pub fn to_csv(&self, pair_id: &str) -> String {
        format!(
            "{pair_id},{:.6},{:.6},{},{},{},{}",
            self.m_score,
            self.homography_error,
            u8::from(self.he),
            self.num_points_a,
            self.num_points_b,
            self.num_matches
        )
    }
}

/// Detailed result of one pair, kept for visualization.
#[derive(Clone, Debug)]
pub struct PairEvaluation {
    pub a: PointSet,
    pub b: PointSet,
    pub matches: MatchSet,
    pub check: MatchCheck,
    pub metrics: PairMetrics,
}

pub fn evaluate_outputs(
    out_a: &ModelOutput,
    out_b: &ModelOutput,
    h_gt: &Homography,
    cfg: &EvalConfig,
) -> PairEvaluation {
    let a = extract_points(out_a, cfg.pt, cfg.rad, cfg.max_k);
    let b = extract_points(out_b, cfg.pt, cfg.rad, cfg.max_k);
    let matches = match_two_way(&a, &b);
    let check = check_matches(&matches, &a, &b, h_gt, cfg.epsilon);
    let m_score = matching_score(&matches, &a, &b, h_gt, cfg.epsilon);
    let pairs: Vec<PointPair> = matches
        .matches
        .iter()
        .map(|m| {
            let (pa, pb) = (&a.points[m.a], &b.points[m.b]);
            ((pa.x as f64, pa.y as f64), (pb.x as f64, pb.y as f64))
        })
        .collect();
    let estimate = estimate_homography(&pairs, &cfg.ransac).ok();
    let (homography_error, he) = homography_error(estimate.as_ref(), h_gt, a.width, a.height, cfg.epsilon);
    let metrics = PairMetrics {
        m_score,
        homography_error,
        he,
        num_points_a: a.len(),
        num_points_b: b.len(),
        num_matches: matches.len(),
        estimate,
    };
    PairEvaluation {
        a,
        b,
        matches,
        check,
        metrics,
    }
}

/// Runs the model on both images and evaluates the pair.
pub fn evaluate_pair(
    params: &ModelParams,
    img_a: &Image,
    img_b: &Image,
    h_gt: &Homography,
    cfg: &EvalConfig,
) -> Result<PairEvaluation> {
    let c = params.topology().in_channels;
    let out_a = model::forward(params, &img_a.with_channels(c))?;
    let out_b = model::forward(params, &img_b.with_channels(c))?;
    Ok(evaluate_outputs(&out_a, &out_b, h_gt, cfg))
}
