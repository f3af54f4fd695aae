//! Planar homographies in pixel coordinates.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Points whose homogeneous coordinate falls below this are treated as
/// mapped to infinity.
pub const MIN_HOMOGENEOUS_W: f64 = 1e-9;

/// Nonsingular 3×3 projective transform normalized so that `h33 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    /// Normalizes by the bottom-right entry.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let s = m[(2, 2)];
        if !s.is_finite() || s.abs() < 1e-12 {
            return Err(Error::Contract(format!(
                "homography has h33 = {s}, cannot normalize"
            )));
        }
        let m = m / s;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite homography entry".into()));
        }
        let det = m.determinant();
        if det.abs() <= 1e-6 {
            return Err(Error::Contract(format!(
                "homography is near-singular (det = {det:e})"
            )));
        }
        Ok(Self { m })
    }

    pub fn from_row_slice(h: &[f64]) -> Result<Self> {
        if h.len() != 9 {
            return Err(Error::Parse(format!(
                "homography needs 9 entries, got {}",
                h.len()
            )));
        }
        Self::new(Matrix3::from_row_slice(h))
    }

    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn to_row_vec(&self) -> Vec<f64> {
        (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .map(|(r, c)| self.m[(r, c)])
            .collect()
    }

    pub fn inverse(&self) -> Self {
        let inv = self
            .m
            .try_inverse()
            .expect("validated homography is invertible");
        Self::new(inv).unwrap_or(Self { m: inv })
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::new(self.m * other.m)
    }

    pub fn determinant(&self) -> f64 {
        self.m.determinant()
    }

    /// Projects `(x, y)`; `None` when the point maps to infinity.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let v = self.m * Vector3::new(x, y, 1.0);
        if v.z.abs() < MIN_HOMOGENEOUS_W {
            return None;
        }
        Some((v.x / v.z, v.y / v.z))
    }

    /// Jacobian of the projective map at `(x, y)`.
    pub fn jacobian(&self, x: f64, y: f64) -> Matrix2<f64> {
        let m = &self.m;
        let u = m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)];
        let v = m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)];
        let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
        let w2 = w * w;
        Matrix2::new(
            (m[(0, 0)] * w - u * m[(2, 0)]) / w2,
            (m[(0, 1)] * w - u * m[(2, 1)]) / w2,
            (m[(1, 0)] * w - v * m[(2, 0)]) / w2,
            (m[(1, 1)] * w - v * m[(2, 1)]) / w2,
        )
    }

    /// Rotation angle in degrees of the orthogonal polar factor of the
    /// local Jacobian at `(x, y)`.
    pub fn rotation_deg_at(&self, x: f64, y: f64) -> f64 {
        let j = self.jacobian(x, y);
        // For a 2×2 matrix the closest rotation has angle atan2(c − b, a + d).
        (j[(1, 0)] - j[(0, 1)])
            .atan2(j[(0, 0)] + j[(1, 1)])
            .to_degrees()
    }

    /// The four image corners `(0,0), (w-1,0), (w-1,h-1), (0,h-1)`.
    pub fn image_corners(width: usize, height: usize) -> [(f64, f64); 4] {
        let (w, h) = ((width - 1) as f64, (height - 1) as f64);
        [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
    }

    /// True when the mapped image rectangle is a strictly convex, consistently
    /// oriented quadrilateral (no fold-over).
    pub fn preserves_convexity(&self, width: usize, height: usize) -> bool {
        let mut pts = [(0.0, 0.0); 4];
        for (k, &(x, y)) in Self::image_corners(width, height).iter().enumerate() {
            let v = self.m * Vector3::new(x, y, 1.0);
            if v.z <= MIN_HOMOGENEOUS_W {
                return false;
            }
            pts[k] = (v.x / v.z, v.y / v.z);
        }
        let mut sign = 0.0;
        for k in 0..4 {
            let a = pts[k];
            let b = pts[(k + 1) % 4];
            let c = pts[(k + 2) % 4];
            let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
            if cross.abs() < 1e-9 {
                return false;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
        // Orientation must be preserved (source corners are clockwise in
        // image coordinates, which is positive cross product here).
        sign > 0.0
    }

    /// Exact four-point solve mapping `src[k] → dst[k]`.
    pub fn from_four_points(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Result<Self> {
        let mut a = nalgebra::SMatrix::<f64, 8, 8>::zeros();
        let mut b = nalgebra::SVector::<f64, 8>::zeros();
        for k in 0..4 {
            let (x, y) = src[k];
            let (u, v) = dst[k];
            let r = 2 * k;
            a[(r, 0)] = x;
            a[(r, 1)] = y;
            a[(r, 2)] = 1.0;
            a[(r, 6)] = -u * x;
            a[(r, 7)] = -u * y;
            b[r] = u;
            a[(r + 1, 3)] = x;
            a[(r + 1, 4)] = y;
            a[(r + 1, 5)] = 1.0;
            a[(r + 1, 6)] = -v * x;
            a[(r + 1, 7)] = -v * y;
            b[r + 1] = v;
        }
        let h = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Contract("degenerate four-point configuration".into()))?;
        Self::new(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
    }
}

impl fmt::Display for Homography {
    /// Nine row-major entries at round-trip precision.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.to_row_vec().iter().map(|v| format!("{v:.16e}")).collect();
        f.write_str(&parts.join(" "))
    }
}

impl FromStr for Homography {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let vals = s
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad homography entry {t:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::from_row_slice(&vals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_solve_recovers_translation() {
        let src = Homography::image_corners(10, 10);
        let dst = src.map(|(x, y)| (x + 3.0, y - 2.0));
        let h = Homography::from_four_points(&src, &dst).unwrap();
        let t = Homography::translation(3.0, -2.0);
        for (a, b) in h.to_row_vec().iter().zip(t.to_row_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_of_pure_rotation() {
        let th = 30f64.to_radians();
        let h = Homography::new(Matrix3::new(
            th.cos(),
            -th.sin(),
            0.0,
            th.sin(),
            th.cos(),
            0.0,
            0.0,
            0.0,
            1.0,
        ))
        .unwrap();
        assert!((h.rotation_deg_at(5.0, 5.0) - 30.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_singular_and_infinite() {
        assert!(Homography::new(Matrix3::zeros()).is_err());
        assert!(Homography::from_row_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        let h = Homography::from_row_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(h.apply(-1.0, 0.0), None);
    }

    #[test]
    fn text_round_trip() {
        let h = Homography::from_row_slice(&[1.1, 0.02, 3.0, -0.01, 0.97, -4.5, 1e-4, -2e-4, 1.0]).unwrap();
        let back: Homography = h.to_string().parse().unwrap();
        assert_eq!(h, back);
    }

    #[test]
    fn fold_over_is_detected() {
        let flip = Homography::from_row_slice(&[-1.0, 0.0, 9.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(!flip.preserves_convexity(10, 10));
        assert!(Homography::identity().preserves_convexity(10, 10));
    }
}
