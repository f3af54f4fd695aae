//! Brute-force references over explicitly enumerated latent masks.
//!
//! Everything here walks every admissible mask of a tiny instance, so it is
//! exact and slow. Instances are capped at [`MAX_POINTS`] points.

use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::em::log_sum_exp;
use crate::error::{Error, Result};
use crate::properties::{clamp_prob, dot, SceneBatch};

pub const MAX_POINTS: usize = 20;

/// Margin of every point under a given mask: `h(y)[i]` matters only where
/// `y[i]` is set.
pub type MarginFn = Arc<dyn Fn(&[bool]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum Margins {
    /// Margins that do not depend on the mask (the `ĉ(ŷ)` substitution).
    Constant(Vec<f64>),
    Dependent(MarginFn),
}

impl std::fmt::Debug for Margins {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Margins::Constant(h) => f.debug_tuple("Constant").field(h).finish(),
            Margins::Dependent(_) => f.write_str("Dependent(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TinyInstance {
    pub r: Vec<f64>,
    pub margins: Margins,
    pub n_min: usize,
    pub n_max: usize,
    pub alpha: f64,
    /// Upper bound `H` of the margin.
    pub h_max: f64,
    pub rad: usize,
    pub coords: Vec<(i64, i64)>,
}

impl TinyInstance {
    /// Instance with mask-independent discriminability probabilities `c̃`,
    /// represented through margins `h = H + ln(c̃)/α` with `α = 1`, `H = 1`.
    pub fn with_c_tilde(r: Vec<f64>, c_tilde: &[f64], n_min: usize, n_max: usize) -> Result<Self> {
        let h = c_tilde.iter().map(|c| 1.0 + c.ln()).collect();
        let n = r.len();
        let inst = Self {
            r,
            margins: Margins::Constant(h),
            n_min,
            n_max,
            alpha: 1.0,
            h_max: 1.0,
            rad: 1,
            coords: (0..n as i64).map(|k| (3 * k, 0)).collect(),
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.r.len();
        if n > MAX_POINTS {
            return Err(Error::TooLarge(format!("{n} points, at most {MAX_POINTS}")));
        }
        if self.coords.len() != n {
            return Err(Error::Shape("one coordinate per point required".into()));
        }
        if let Margins::Constant(h) = &self.margins {
            if h.len() != n {
                return Err(Error::Shape("one margin per point required".into()));
            }
        }
        if self.r.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::InvalidConfig("repeatability must lie in (0, 1)".into()));
        }
        if self.n_min >= self.n_max {
            return Err(Error::InvalidConfig("N_min must be below N_max".into()));
        }
        Ok(())
    }

    fn margins_for(&self, y: &[bool]) -> Vec<f64> {
        match &self.margins {
            Margins::Constant(h) => h.clone(),
            Margins::Dependent(f) => f(y),
        }
    }

    /// `log c̃_i` for the constant substitution.
    pub fn log_c_tilde(&self, i: usize) -> Option<f64> {
        match &self.margins {
            Margins::Constant(h) => Some(self.alpha * (h[i] - self.h_max).min(0.0)),
            Margins::Dependent(_) => None,
        }
    }

    /// `log (r(y) ĉ(y))`, the unnormalized log-probability of a mask.
    pub fn log_weight(&self, y: &[bool]) -> f64 {
        let h = self.margins_for(y);
        y.iter()
            .enumerate()
            .map(|(i, &on)| {
                let r = clamp_prob(self.r[i]);
                if on {
                    r.ln() + self.alpha * (h[i] - self.h_max).min(0.0)
                } else {
                    (1.0 - r).ln()
                }
            })
            .sum()
    }

    /// `L(y) = Σ_i [y_i log r_i + (1 − y_i) log(1 − r_i) + α y_i (h_i(y) − H)]`.
    pub fn log_likelihood(&self, y: &[bool]) -> f64 {
        let h = self.margins_for(y);
        y.iter()
            .enumerate()
            .map(|(i, &on)| {
                let r = clamp_prob(self.r[i]);
                if on {
                    r.ln() + self.alpha * (h[i] - self.h_max)
                } else {
                    (1.0 - r).ln()
                }
            })
            .sum()
    }
}

fn mask_of(bits: u32, n: usize) -> Vec<bool> {
    (0..n).map(|k| bits >> k & 1 == 1).collect()
}

fn guard(n: usize) -> Result<()> {
    if n > MAX_POINTS {
        return Err(Error::TooLarge(format!("{n} points, at most {MAX_POINTS}")));
    }
    Ok(())
}

/// Every `y ≤ ŷ` with `N_min < ‖y‖ < N_max`, in increasing bit order.
pub fn enumerate_reduced_space(inst: &TinyInstance, yhat: &[bool]) -> Result<Vec<Vec<bool>>> {
    if yhat.len() != inst.len() {
        return Err(Error::Shape("ŷ must have one entry per point".into()));
    }
    let on: Vec<usize> = (0..yhat.len()).filter(|&k| yhat[k]).collect();
    guard(on.len())?;
    let mut out = Vec::new();
    for bits in 0u32..(1u32 << on.len()) {
        let n = bits.count_ones() as usize;
        if inst.n_min < n && n < inst.n_max {
            let mut y = vec![false; yhat.len()];
            for (b, &k) in on.iter().enumerate() {
                y[k] = bits >> b & 1 == 1;
            }
            out.push(y);
        }
    }
    Ok(out)
}

/// Every mask over all points that satisfies the count bounds and has no two
/// selected points within Chebyshev distance `rad`.
pub fn enumerate_full_space(inst: &TinyInstance) -> Result<Vec<Vec<bool>>> {
    let n = inst.len();
    guard(n)?;
    let rad = inst.rad as i64;
    let conflict: Vec<u32> = (0..n)
        .map(|a| {
            (0..n)
                .filter(|&b| {
                    b != a && {
                        let (pa, pb) = (inst.coords[a], inst.coords[b]);
                        (pa.0 - pb.0).abs().max((pa.1 - pb.1).abs()) <= rad
                    }
                })
                .fold(0u32, |m, b| m | 1 << b)
        })
        .collect();
    Ok((0u32..(1u32 << n))
        .filter(|&bits| {
            let c = bits.count_ones() as usize;
            inst.n_min < c
                && c < inst.n_max
                && (0..n).all(|a| bits >> a & 1 == 0 || bits & conflict[a] == 0)
        })
        .map(|bits| mask_of(bits, n))
        .collect())
}

/// Marginals `P(y_i = 1)` under `P(y) ∝ r(y) ĉ(y)` restricted to `space`.
pub fn exact_posterior(inst: &TinyInstance, space: &[Vec<bool>]) -> Result<Vec<f64>> {
    if space.is_empty() {
        return Err(Error::EmptySpace {
            selected: 0,
            n_min: inst.n_min,
        });
    }
    let logw: Vec<f64> = space.iter().map(|y| inst.log_weight(y)).collect();
    let log_z = log_sum_exp(logw.iter().copied());
    let mut p = vec![0.0; inst.len()];
    for (y, lw) in space.iter().zip(&logw) {
        let w = (lw - log_z).exp();
        for (pi, &on) in p.iter_mut().zip(y) {
            if on {
                *pi += w;
            }
        }
    }
    Ok(p.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// `E_y[L(y)]` under the exact distribution on `space`.
pub fn exact_expectation(inst: &TinyInstance, space: &[Vec<bool>]) -> Result<f64> {
    if space.is_empty() {
        return Err(Error::EmptySpace {
            selected: 0,
            n_min: inst.n_min,
        });
    }
    let logw: Vec<f64> = space.iter().map(|y| inst.log_weight(y)).collect();
    let log_z = log_sum_exp(logw.iter().copied());
    Ok(space
        .iter()
        .zip(&logw)
        .map(|(y, lw)| (lw - log_z).exp() * inst.log_likelihood(y))
        .sum())
}

/// Exact `Σ_{N_min<n<N_max} C(m, n)` and `Σ C(m−1, n−1)` over the same sizes.
pub fn big_counts(m: usize, n_min: usize, n_max: usize) -> (BigUint, BigUint) {
    let binom = |n: usize, k: usize| -> BigUint {
        if k > n {
            return BigUint::zero();
        }
        let mut c = BigUint::one();
        for i in 0..k {
            c = c * BigUint::from(n - i) / BigUint::from(i + 1);
        }
        c
    };
    let mut total = BigUint::zero();
    let mut with = BigUint::zero();
    for n in (n_min + 1)..n_max {
        if n > m {
            break;
        }
        total += binom(m, n);
        if m > 0 {
            with += binom(m - 1, n - 1);
        }
    }
    (total, with)
}

/// Fraction of ordered view pairs in which the point's positive similarity
/// beats every negative similarity to the other selected points (an empty
/// negative set counts as beaten).
pub fn sharp_discriminability(point: usize, selected: &[usize], scene: &SceneBatch<'_>) -> Result<f64> {
    let views = scene.views();
    let mut hits = 0usize;
    let mut pairs = 0usize;
    for j in 0..views {
        let Some(anchor) = scene.desc(point, j) else { continue };
        for jp in (0..views).filter(|&jp| jp != j) {
            let Some(pos) = scene.desc(point, jp) else { continue };
            let best_neg = selected
                .iter()
                .filter(|&&o| o != point)
                .filter_map(|&o| scene.desc(o, jp))
                .map(|d| dot(anchor, d))
                .fold(f64::NEG_INFINITY, f64::max);
            pairs += 1;
            if dot(anchor, pos) > best_neg {
                hits += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::InvalidPoint);
    }
    Ok(hits as f64 / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(n: usize, n_min: usize, n_max: usize) -> TinyInstance {
        TinyInstance::with_c_tilde(vec![0.5; n], &vec![1.0; n], n_min, n_max).unwrap()
    }

    #[test]
    fn reduced_space_fixtures() {
        assert_eq!(enumerate_reduced_space(&inst(3, 0, 4), &[true; 3]).unwrap().len(), 7);
        let s = enumerate_reduced_space(&inst(3, 1, 3), &[true, false, true]).unwrap();
        assert_eq!(s, vec![vec![true, false, true]]);
        assert!(enumerate_reduced_space(&inst(3, 2, 3), &[true, true, false]).unwrap().is_empty());
    }

    #[test]
    fn guard_refuses_big_instances() {
        let mut i = inst(20, 0, 5);
        i.r.push(0.5);
        i.coords.push((100, 0));
        assert!(matches!(enumerate_full_space(&i), Err(Error::TooLarge(_))));
    }

    #[test]
    fn close_points_exclude_each_other() {
        let mut i = inst(2, 0, 3);
        i.coords = vec![(0, 0), (1, 1)];
        i.rad = 1;
        let s = enumerate_full_space(&i).unwrap();
        assert_eq!(s, vec![vec![true, false], vec![false, true]]);
    }

    #[test]
    fn symmetric_singletons() {
        let i = inst(2, 0, 2);
        let s = enumerate_reduced_space(&i, &[true, true]).unwrap();
        let p = exact_posterior(&i, &s).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert!(exact_posterior(&i, &[]).is_err());
    }

    #[test]
    fn big_counts_fixture() {
        let (t, w) = big_counts(5, 1, 4);
        assert_eq!((t, w), (BigUint::from(20u32), BigUint::from(10u32)));
    }
}
