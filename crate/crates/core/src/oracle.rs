//! Brute-force ground truth for small series.
//!
//! Nothing here touches prefix sums or quadratic updates: every candidate
//! segmentation is fitted by a dense least-squares solve on the explicit
//! hat-function design matrix, and residuals are summed directly.

use nalgebra::{DMatrix, DVector};

use crate::engine::{check_taus, Segmentation};
use crate::error::{Error, Result};
use crate::quadfn::{ABS_TOL, REL_TOL};
use crate::segcost::{validate_data, PenaltyConfig};

/// Largest series the exhaustive search accepts.
pub const MAX_EXHAUSTIVE_N: usize = 16;

/// Design matrix of the continuous piecewise-linear basis over `y[..t]`:
/// column `k` holds the weight of the boundary value at `bounds[k]`.
fn design(t: usize, bounds: &[usize]) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(t, bounds.len());
    for k in 0..bounds.len() - 1 {
        let (s, e) = (bounds[k], bounds[k + 1]);
        for j in s + 1..=e {
            let w = (j - s) as f64 / (e - s) as f64;
            x[(j - 1, k)] += 1.0 - w;
            x[(j - 1, k + 1)] += w;
        }
    }
    x
}

fn least_squares(x: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = x.clone().svd(true, true);
    svd.solve(b, 1e-12)
        .expect("SVD with both factors always solves")
}

fn penalties(bounds: &[usize], cfg: &PenaltyConfig) -> f64 {
    let lengths: f64 = bounds.windows(2).map(|w| cfg.h_value(w[1] - w[0])).sum();
    lengths + cfg.beta * (bounds.len() - 1) as f64
}

fn bounds_of(taus: &[usize], end: usize) -> Vec<usize> {
    let mut b = Vec::with_capacity(taus.len() + 2);
    b.push(0);
    b.extend_from_slice(taus);
    b.push(end);
    b
}

/// Best boundary values and total penalized cost for fixed changepoints.
///
/// If the first segment holds one observation, the unidentified start value
/// is set equal to the value at the first changepoint.
pub fn fit_given_taus(y: &[f64], taus: &[usize], cfg: &PenaltyConfig) -> Result<(Vec<f64>, f64)> {
    validate_data(y)?;
    cfg.validate()?;
    let n = y.len();
    check_taus(taus, n)?;
    let bounds = bounds_of(taus, n);
    let x = design(n, &bounds);
    let b = DVector::from_column_slice(y);
    let sol = least_squares(&x, &b);
    let mut phis: Vec<f64> = sol.iter().copied().collect();
    if bounds[1] == 1 {
        phis[0] = phis[1];
    }
    let rss: f64 = (0..n)
        .map(|j| {
            let fit: f64 = (0..phis.len()).map(|k| x[(j, k)] * phis[k]).sum();
            (y[j] - fit).powi(2)
        })
        .sum();
    Ok((phis, rss / cfg.sigma2 + penalties(&bounds, cfg)))
}

fn subset(mask: u32, limit: usize) -> Vec<usize> {
    (1..limit)
        .filter(|&tau| mask & (1 << (tau - 1)) != 0)
        .collect()
}

/// Enumerates every changepoint subset; ties within tolerance go to fewer
/// changepoints, then the lexicographically smaller vector.
pub fn exhaustive(y: &[f64], cfg: &PenaltyConfig) -> Result<Segmentation> {
    validate_data(y)?;
    let n = y.len();
    if n > MAX_EXHAUSTIVE_N {
        return Err(Error::TooLarge {
            n,
            limit: MAX_EXHAUSTIVE_N,
        });
    }
    let mut scored = Vec::with_capacity(1 << (n - 1));
    for mask in 0..(1u32 << (n - 1)) {
        let taus = subset(mask, n);
        let (phis, cost) = fit_given_taus(y, &taus, cfg)?;
        scored.push((taus, phis, cost));
    }
    let best = scored.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    let window = best + ABS_TOL + REL_TOL * best.abs();
    let (taus, phis, cost) = scored
        .into_iter()
        .filter(|s| s.2 <= window)
        .min_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)))
        .expect("the empty subset is always scored");
    Ok(Segmentation {
        n,
        taus,
        phis,
        cost,
        diagnostics: Default::default(),
    })
}

/// Minimum penalized cost of segmenting `y[..t]` with the fitted value at
/// `t` pinned to `phi`.
pub fn conditional_cost(y: &[f64], t: usize, phi: f64, cfg: &PenaltyConfig) -> Result<f64> {
    validate_data(y)?;
    cfg.validate()?;
    if t == 0 || t > y.len() {
        return Err(Error::BadRange {
            start: 0,
            end: t,
            n: y.len(),
        });
    }
    if t > MAX_EXHAUSTIVE_N {
        return Err(Error::TooLarge {
            n: t,
            limit: MAX_EXHAUSTIVE_N,
        });
    }
    let mut best = f64::INFINITY;
    for mask in 0..(1u32 << (t - 1)) {
        let taus = subset(mask, t);
        let bounds = bounds_of(&taus, t);
        let x = design(t, &bounds);
        let free = bounds.len() - 1;
        let pinned = x.column(free).into_owned();
        let target = DVector::from_column_slice(&y[..t]) - pinned * phi;
        let xf = x.columns(0, free).into_owned();
        let sol = least_squares(&xf, &target);
        let resid = &target - &xf * &sol;
        let cost = resid.norm_squared() / cfg.sigma2 + penalties(&bounds, cfg);
        best = best.min(cost);
    }
    Ok(best)
}
