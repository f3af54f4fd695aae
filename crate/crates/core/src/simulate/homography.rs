//! Random viewpoint changes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Homography;

pub const MAX_REJECTIONS: usize = 100;

/// Parameters of the homography distribution.
///
/// A draw rotates the image corners about the centre by `θ ~ U(−max, max)`,
/// scales them by `U(1 − perturb, 1 + perturb)`, then moves each corner by a
/// random offset of length at most `perturb` times the image diagonal. The
/// four-point solve gives the homography, which is rejected if it folds the
/// image over or if its local rotation at the centre reaches the cap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomographySampler {
    pub max_rotation_deg: f64,
    pub perturb: f64,
}

impl HomographySampler {
    pub const MEDIUM: Self = Self {
        max_rotation_deg: 45.0,
        perturb: 0.1,
    };
    pub const FULL: Self = Self {
        max_rotation_deg: 180.0,
        perturb: 0.15,
    };

    pub fn new(max_rotation_deg: f64, perturb: f64) -> Result<Self> {
        let s = Self {
            max_rotation_deg,
            perturb,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg <= 180.0) {
            return Err(Error::InvalidConfig(format!(
                "max rotation {} outside [0, 180]",
                self.max_rotation_deg
            )));
        }
        if !(0.0..=0.3).contains(&self.perturb) {
            return Err(Error::InvalidConfig(format!("perturb {} outside [0, 0.3]", self.perturb)));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng, width: usize, height: usize) -> Result<Homography> {
        sample_homography(rng, self.max_rotation_deg, self.perturb, width, height)
    }
}

impl FromStr for HomographySampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "viewpoint_medium" => Ok(Self::MEDIUM),
            "viewpoint_full" => Ok(Self::FULL),
            _ => Err(Error::Parse(format!("unknown viewpoint level {s:?}"))),
        }
    }
}

impl fmt::Display for HomographySampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rotation<={} perturb={}", self.max_rotation_deg, self.perturb)
    }
}

fn accept(h: &Homography, max_rotation_deg: f64, width: usize, height: usize) -> bool {
    if !h.preserves_convexity(width, height) {
        return false;
    }
    let (cx, cy) = ((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
    max_rotation_deg >= 180.0 || h.rotation_deg_at(cx, cy).abs() < max_rotation_deg.max(f64::MIN_POSITIVE)
}

pub fn sample_homography(
    rng: &mut impl Rng,
    max_rotation_deg: f64,
    perturb: f64,
    width: usize,
    height: usize,
) -> Result<Homography> {
    HomographySampler {
        max_rotation_deg,
        perturb,
    }
    .validate()?;
    if width < 2 || height < 2 {
        return Err(Error::Shape(format!("{width}x{height} image is too small")));
    }
    let corners = Homography::image_corners(width, height);
    if max_rotation_deg == 0.0 && perturb == 0.0 {
        return Ok(Homography::identity());
    }
    let (cx, cy) = ((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
    let diag = ((width * width + height * height) as f64).sqrt();
    for _ in 0..MAX_REJECTIONS {
        let theta = rng.random_range(-max_rotation_deg..=max_rotation_deg).to_radians();
        let scale = rng.random_range(1.0 - perturb..=1.0 + perturb);
        let (s, c) = theta.sin_cos();
        let mut dst = [(0.0, 0.0); 4];
        for (k, &(x, y)) in corners.iter().enumerate() {
            let (dx, dy) = (x - cx, y - cy);
            let radius = perturb * diag * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            dst[k] = (
                cx + scale * (c * dx - s * dy) + radius * phi.cos(),
                cy + scale * (s * dx + c * dy) + radius * phi.sin(),
            );
        }
        let Ok(h) = Homography::from_four_points(&corners, &dst) else { continue };
        if accept(&h, max_rotation_deg, width, height) {
            return Ok(h);
        }
    }
    Err(Error::SamplingFailed(format!(
        "no acceptable homography after {MAX_REJECTIONS} draws"
    )))
}
