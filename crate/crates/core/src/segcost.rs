//! Prefix sums over the data and O(1) segment-cost coefficients.
//!
//! Indices follow the changepoint convention: a segment `(start, end]`
//! covers observations `start + 1 ..= end` (1-based), with the fitted line
//! running from its value at time `start` to its value at time `end`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadfn::SegmentQuadratic;

/// Running sums of `y`, `y^2` and `j * y` (1-based `j`), each with a leading 0.
///
/// Every running sum keeps a second array with its accumulated rounding
/// error, so differences between distant prefixes stay accurate.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixSums {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    sum_weighted: Vec<f64>,
    sum_err: Vec<f64>,
    sum_sq_err: Vec<f64>,
    sum_weighted_err: Vec<f64>,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Compensated running sum of exactly-split terms.
#[derive(Default)]
struct Accumulator {
    hi: f64,
    lo: f64,
}

impl Accumulator {
    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let p_err = a.mul_add(b, -p);
        let (s, e) = two_sum(self.hi, p);
        self.hi = s;
        self.lo += e + p_err;
    }
}

#[inline]
fn diff(hi: &[f64], lo: &[f64], start: usize, end: usize) -> f64 {
    let (d, e) = two_sum(hi[end], -hi[start]);
    d + (e + (lo[end] - lo[start]))
}

impl PrefixSums {
    pub fn new(y: &[f64]) -> Result<Self> {
        validate_data(y)?;
        let n = y.len();
        let mut out = Self {
            sum: Vec::with_capacity(n + 1),
            sum_sq: Vec::with_capacity(n + 1),
            sum_weighted: Vec::with_capacity(n + 1),
            sum_err: Vec::with_capacity(n + 1),
            sum_sq_err: Vec::with_capacity(n + 1),
            sum_weighted_err: Vec::with_capacity(n + 1),
        };
        let (mut s1, mut s2, mut sj) = (
            Accumulator::default(),
            Accumulator::default(),
            Accumulator::default(),
        );
        for j in 0..=n {
            if j > 0 {
                let v = y[j - 1];
                s1.add_product(1.0, v);
                s2.add_product(v, v);
                sj.add_product(j as f64, v);
            }
            out.sum.push(s1.hi);
            out.sum_err.push(s1.lo);
            out.sum_sq.push(s2.hi);
            out.sum_sq_err.push(s2.lo);
            out.sum_weighted.push(sj.hi);
            out.sum_weighted_err.push(sj.lo);
        }
        Ok(out)
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.sum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    pub fn sum_sq(&self) -> &[f64] {
        &self.sum_sq
    }

    pub fn sum_weighted(&self) -> &[f64] {
        &self.sum_weighted
    }

    /// Coefficients of the scaled squared error of a line over `(start, end]`.
    pub fn segment_coefficients(
        &self,
        start: usize,
        end: usize,
        sigma2: f64,
    ) -> Result<SegmentQuadratic> {
        if start >= end || end > self.len() {
            return Err(Error::BadRange {
                start,
                end,
                n: self.len(),
            });
        }
        Ok(self.segment_coefficients_unchecked(start, end, sigma2))
    }

    #[inline]
    pub(crate) fn segment_coefficients_unchecked(
        &self,
        start: usize,
        end: usize,
        sigma2: f64,
    ) -> SegmentQuadratic {
        let len = (end - start) as f64;
        let w1 = diff(&self.sum, &self.sum_err, start, end);
        let w2 = diff(&self.sum_sq, &self.sum_sq_err, start, end);
        // sum of y_j * (j - start)
        let wj = (-(start as f64)).mul_add(
            w1,
            diff(&self.sum_weighted, &self.sum_weighted_err, start, end),
        );
        let quad_end = (len + 1.0) * (2.0 * len + 1.0) / (6.0 * len);
        SegmentQuadratic {
            end_sq: quad_end / sigma2,
            cross: ((len + 1.0) - 2.0 * quad_end) / sigma2,
            end_lin: -2.0 * wj / (len * sigma2),
            constant: w2 / sigma2,
            start_lin: 2.0 * (wj / len - w1) / sigma2,
            start_sq: (len - 1.0) * (2.0 * len - 1.0) / (6.0 * len * sigma2),
        }
    }
}

pub(crate) fn validate_data(y: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::EmptyData);
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(i));
    }
    Ok(())
}

/// Segment-length penalty `h`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthPenalty {
    #[default]
    Zero,
    /// `gamma * ln(len)`
    GammaLog { gamma: f64 },
}

impl LengthPenalty {
    #[inline]
    pub fn value(&self, len: usize) -> f64 {
        match *self {
            LengthPenalty::Zero => 0.0,
            LengthPenalty::GammaLog { gamma } => gamma * (len as f64).ln(),
        }
    }
}

/// Penalty constant, length penalty and the noise variance scaling costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub beta: f64,
    pub h: LengthPenalty,
    pub sigma2: f64,
}

impl PenaltyConfig {
    pub fn new(beta: f64, h: LengthPenalty, sigma2: f64) -> Result<Self> {
        let cfg = Self { beta, h, sigma2 };
        cfg.validate()?;
        Ok(cfg)
    }

    /// BIC: `beta = 2 ln n`, no length penalty.
    pub fn bic(n: usize, sigma2: f64) -> Result<Self> {
        Self::new(default_beta(n), LengthPenalty::Zero, sigma2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::SigmaNotPositive(self.sigma2));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidPenalty(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if let LengthPenalty::GammaLog { gamma } = self.h {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::InvalidPenalty(format!(
                    "gamma must be non-negative, got {gamma}"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn h_value(&self, len: usize) -> f64 {
        self.h.value(len)
    }

    /// Inequality-pruning margin `2 beta + h(1) + h(n)`.
    pub fn pruning_margin(&self, n: usize) -> f64 {
        2.0 * self.beta + self.h_value(1) + self.h_value(n)
    }
}

/// `2 ln n`.
pub fn default_beta(n: usize) -> f64 {
    2.0 * (n as f64).ln()
}
