//! Sizes of the reduced latent sample space: masks dominated by the local
//! maximum mask with `N_min < n < N_max` selected points.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Largest `m` handled with exact integer arithmetic.
pub const EXACT_COUNT_LIMIT: usize = 60;

/// Natural logarithms of the sample-space sizes for `m` candidate points:
/// all masks, masks containing a given point and masks excluding it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleSpaceCounts {
    pub candidates: usize,
    pub log_total: f64,
    pub log_with_point: f64,
    pub log_without_point: f64,
}

/// Inclusive range of admissible mask sizes, or `None` when empty.
pub fn feasible_sizes(m: usize, n_min: usize, n_max: usize) -> Option<(usize, usize)> {
    let lo = n_min + 1;
    let hi = n_max.checked_sub(1)?.min(m);
    (lo <= hi).then_some((lo, hi))
}

fn binomial_u128(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k {
        c = c * (n + 1 - i) as u128 / i as u128;
    }
    c
}

/// Exact `(total, with, without)` for `m ≤ EXACT_COUNT_LIMIT`.
pub fn exact_count_sample_space(m: usize, n_min: usize, n_max: usize) -> Option<(u128, u128, u128)> {
    if m > EXACT_COUNT_LIMIT {
        return None;
    }
    let (lo, hi) = feasible_sizes(m, n_min, n_max)?;
    let mut total = 0u128;
    let mut with = 0u128;
    for n in lo..=hi {
        total += binomial_u128(m, n);
        with += binomial_u128(m - 1, n - 1);
    }
    Some((total, with, total - with))
}

pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.into_iter().collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn ln_u128(v: u128) -> f64 {
    if v == 0 {
        f64::NEG_INFINITY
    } else {
        (v as f64).ln()
    }
}

/// Log-domain sample-space sizes. Exact integers for small `m`, log-gamma
/// binomials with log-sum-exp otherwise. The excluding count is summed
/// directly as `Σ C(m−1, n)` rather than by subtraction.
pub fn log_count_sample_space(m: usize, n_min: usize, n_max: usize) -> Result<SampleSpaceCounts> {
    let empty = || Error::EmptySpace { selected: m, n_min };
    if m == 0 {
        return Err(empty());
    }
    let (lo, hi) = feasible_sizes(m, n_min, n_max).ok_or_else(empty)?;
    if let Some((t, w, wo)) = exact_count_sample_space(m, n_min, n_max) {
        return Ok(SampleSpaceCounts {
            candidates: m,
            log_total: ln_u128(t),
            log_with_point: ln_u128(w),
            log_without_point: ln_u128(wo),
        });
    }
    Ok(SampleSpaceCounts {
        candidates: m,
        log_total: log_sum_exp((lo..=hi).map(|n| ln_binomial(m, n))),
        log_with_point: log_sum_exp((lo..=hi).map(|n| ln_binomial(m - 1, n - 1))),
        log_without_point: log_sum_exp((lo..=hi).map(|n| ln_binomial(m - 1, n))),
    })
}
