//! Robust homography estimation: RANSAC over four-point samples with a
//! normalized direct linear transform.

use nalgebra::{DMatrix, Matrix3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub confidence: f64,
    /// Inlier reprojection threshold in pixels.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            confidence: 0.99,
            threshold: 3.0,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("RANSAC needs at least one iteration".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig(format!("RANSAC confidence {}", self.confidence)));
        }
        if self.threshold.is_nan() || self.threshold <= 0.0 {
            return Err(Error::InvalidConfig(format!("RANSAC threshold {}", self.threshold)));
        }
        Ok(())
    }
}

pub type PointPair = ((f64, f64), (f64, f64));

/// Similarity transform taking the points to zero mean and mean distance √2.
fn normalizer(pts: impl Iterator<Item = (f64, f64)> + Clone) -> Matrix3<f64> {
    let n = pts.clone().count() as f64;
    let (sx, sy) = pts.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = pts.map(|(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Least-squares homography from at least four correspondences.
pub fn fit_dlt(pairs: &[PointPair]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::EstimationFailed(format!("{} correspondences, need 4", pairs.len())));
    }
    let ta = normalizer(pairs.iter().map(|p| p.0));
    let tb = normalizer(pairs.iter().map(|p| p.1));
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, &((x, y), (u, v))) in pairs.iter().enumerate() {
        let p = ta * nalgebra::Vector3::new(x, y, 1.0);
        let q = tb * nalgebra::Vector3::new(u, v, 1.0);
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r = 2 * k;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::EstimationFailed("SVD did not converge".into()))?;
    let (kmin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nine singular values");
    let h = v_t.row(kmin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let tb_inv = tb
        .try_inverse()
        .ok_or_else(|| Error::EstimationFailed("singular normalization".into()))?;
    Homography::new(tb_inv * hn * ta).map_err(|e| Error::EstimationFailed(e.to_string()))
}

fn reprojection_error(h: &Homography, &((x, y), (u, v)): &PointPair) -> f64 {
    match h.apply(x, y) {
        Some((px, py)) => ((px - u).powi(2) + (py - v).powi(2)).sqrt(),
        None => f64::INFINITY,
    }
}

fn collinear(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    cross.abs() < 1e-9
}

fn degenerate_sample(pairs: &[PointPair], idx: &[usize; 4]) -> bool {
    for side in 0..2 {
        let p = |k: usize| if side == 0 { pairs[idx[k]].0 } else { pairs[idx[k]].1 };
        for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
            if collinear(p(i), p(j), p(k)) {
                return true;
            }
        }
    }
    false
}

/// RANSAC estimate followed by a least-squares refit on the best inlier set.
pub fn estimate_homography(pairs: &[PointPair], cfg: &RansacConfig) -> Result<Homography> {
    cfg.validate()?;
    let n = pairs.len();
    if n < 4 {
        return Err(Error::EstimationFailed(format!("{n} matches, need at least 4")));
    }
    let mut rng = rng::stream(cfg.seed, &[0x4a5c]);
    let mut best: Option<(usize, Homography)> = None;
    let mut needed = cfg.max_iterations;
    let mut it = 0;
    while it < needed.min(cfg.max_iterations) {
        it += 1;
        let mut idx = [0usize; 4];
        for k in 0..4 {
            loop {
                let c = rng.random_range(0..n);
                if !idx[..k].contains(&c) {
                    idx[k] = c;
                    break;
                }
            }
        }
        if degenerate_sample(pairs, &idx) {
            continue;
        }
        let sample: Vec<PointPair> = idx.iter().map(|&k| pairs[k]).collect();
        let Ok(h) = fit_dlt(&sample) else { continue };
        let inliers = pairs
            .iter()
            .filter(|p| reprojection_error(&h, p) <= cfg.threshold)
            .count();
        if best.as_ref().is_none_or(|(b, _)| inliers > *b) {
            best = Some((inliers, h));
            let w = inliers as f64 / n as f64;
            let p_all = w.powi(4);
            needed = if p_all >= 1.0 - f64::EPSILON {
                it
            } else if p_all <= 0.0 {
                cfg.max_iterations
            } else {
                let k = (1.0 - cfg.confidence).ln() / (1.0 - p_all).ln();
                (k.ceil() as usize).max(it)
            };
        }
    }
    let (count, h) = best.ok_or_else(|| Error::EstimationFailed("every sample was degenerate".into()))?;
    if count < 4 {
        return Ok(h);
    }
    let inliers: Vec<PointPair> = pairs
        .iter()
        .copied()
        .filter(|p| reprojection_error(&h, p) <= cfg.threshold)
        .collect();
    Ok(fit_dlt(&inliers).unwrap_or(h))
}

/// Mean distance between the image corners mapped by `estimate` and by
/// `truth`, and whether it is within `epsilon`. A missing estimate has
/// infinite error.
pub fn homography_error(
    estimate: Option<&Homography>,
    truth: &Homography,
    width: usize,
    height: usize,
    epsilon: f64,
) -> (f64, bool) {
    let Some(est) = estimate else {
        return (f64::INFINITY, false);
    };
    let corners = Homography::image_corners(width, height);
    let mut total = 0.0;
    for &(x, y) in &corners {
        match (truth.apply(x, y), est.apply(x, y)) {
            (Some(a), Some(b)) => total += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(),
            _ => return (f64::INFINITY, false),
        }
    }
    let err = total / 4.0;
    (err, err <= epsilon)
}
