//! Exact algebra on univariate quadratics in the boundary value `phi`.
//!
//! Every cost function carried by the dynamic program is a quadratic
//! `quad * phi^2 + lin * phi + constant`. This module evaluates and minimizes
//! them, orders them at `phi -> -inf` and just to the right of a point, finds
//! where two of them cross, and eliminates the start value of a segment.

use std::cmp::Ordering;
use std::ops::Sub;

use crate::error::{Error, Result};

/// Relative tolerance for function-equality and root tests.
pub const REL_TOL: f64 = 1e-9;
/// Absolute tolerance for function-equality and root tests.
pub const ABS_TOL: f64 = 1e-12;

#[inline]
fn negligible(value: f64, scale: f64) -> bool {
    value.abs() <= ABS_TOL + REL_TOL * scale
}

/// `quad * phi^2 + lin * phi + constant`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quadratic {
    pub quad: f64,
    pub lin: f64,
    pub constant: f64,
}

impl Quadratic {
    pub const ZERO: Quadratic = Quadratic {
        quad: 0.0,
        lin: 0.0,
        constant: 0.0,
    };

    pub const fn new(quad: f64, lin: f64, constant: f64) -> Self {
        Self {
            quad,
            lin,
            constant,
        }
    }

    #[inline]
    pub fn eval(&self, phi: f64) -> f64 {
        (self.quad * phi + self.lin) * phi + self.constant
    }

    #[inline]
    pub fn derivative(&self, phi: f64) -> f64 {
        2.0 * self.quad * phi + self.lin
    }

    pub fn is_finite(&self) -> bool {
        self.quad.is_finite() && self.lin.is_finite() && self.constant.is_finite()
    }

    /// Minimizer and minimum value.
    ///
    /// A constant function is minimized at `phi = 0` by convention.
    pub fn minimum(&self) -> Result<(f64, f64)> {
        if self.quad > 0.0 {
            let phi = -self.lin / (2.0 * self.quad);
            Ok((phi, self.constant - self.lin * self.lin / (4.0 * self.quad)))
        } else if self.quad == 0.0 && self.lin == 0.0 {
            Ok((0.0, self.constant))
        } else {
            Err(Error::UnboundedBelow)
        }
    }

    /// Smallest real root of `self - other` strictly greater than `after`.
    ///
    /// `after` may be `f64::NEG_INFINITY`. A tangency (double root) counts
    /// as a root. Returns [`Error::IdenticalFunctions`] when the difference
    /// vanishes within tolerance.
    pub fn crossing_after(&self, other: &Quadratic, after: f64) -> Result<Option<f64>> {
        let d = *self - *other;
        let quad_scale = self.quad.abs().max(other.quad.abs());
        let lin_scale = self.lin.abs().max(other.lin.abs());
        let const_scale = self.constant.abs().max(other.constant.abs());
        let flat_quad = negligible(d.quad, quad_scale);
        let flat_lin = negligible(d.lin, lin_scale);

        if flat_quad && flat_lin {
            if negligible(d.constant, const_scale) {
                return Err(Error::IdenticalFunctions);
            }
            return Ok(None);
        }

        let first_above = |roots: &[f64]| roots.iter().copied().find(|&r| r > after);

        if flat_quad {
            let root = -d.constant / d.lin;
            return Ok(first_above(&[root]));
        }

        let disc = d.lin * d.lin - 4.0 * d.quad * d.constant;
        let disc_scale = d.lin * d.lin + (4.0 * d.quad * d.constant).abs();
        if disc < 0.0 {
            if negligible(disc, disc_scale) {
                let root = -d.lin / (2.0 * d.quad);
                return Ok(first_above(&[root]));
            }
            return Ok(None);
        }
        // Cancellation-free pair of roots.
        let q = -0.5 * (d.lin + d.lin.signum() * disc.sqrt());
        let (r1, r2) = if q == 0.0 {
            (0.0, 0.0)
        } else {
            let a = q / d.quad;
            let b = d.constant / q;
            (a.min(b), a.max(b))
        };
        Ok(first_above(&[r1, r2]))
    }

    /// Order of the two functions in the limit `phi -> -inf`.
    ///
    /// `Less` means `self` is the smaller one there.
    pub fn cmp_at_neg_infinity(&self, other: &Quadratic) -> Ordering {
        if !negligible(
            self.quad - other.quad,
            self.quad.abs().max(other.quad.abs()),
        ) {
            return self.quad.total_cmp(&other.quad);
        }
        if !negligible(self.lin - other.lin, self.lin.abs().max(other.lin.abs())) {
            // A larger linear coefficient decreases faster towards -inf.
            return other.lin.total_cmp(&self.lin);
        }
        if !negligible(
            self.constant - other.constant,
            self.constant.abs().max(other.constant.abs()),
        ) {
            return self.constant.total_cmp(&other.constant);
        }
        Ordering::Equal
    }

    /// Order of the two functions on `(phi, phi + eps)` for vanishing `eps`.
    ///
    /// Compares value, then slope, then curvature at `phi`, each within
    /// tolerance.
    pub fn cmp_right_of(&self, other: &Quadratic, phi: f64) -> Ordering {
        let value_scale = self.eval(phi).abs().max(other.eval(phi).abs());
        let dv = self.eval(phi) - other.eval(phi);
        if !negligible(dv, value_scale) {
            return dv.total_cmp(&0.0);
        }
        let slope_scale = (2.0 * self.quad * phi).abs()
            + self.lin.abs()
            + (2.0 * other.quad * phi).abs()
            + other.lin.abs();
        let ds = self.derivative(phi) - other.derivative(phi);
        if !negligible(ds, slope_scale) {
            return ds.total_cmp(&0.0);
        }
        let dq = self.quad - other.quad;
        if !negligible(dq, self.quad.abs().max(other.quad.abs())) {
            return dq.total_cmp(&0.0);
        }
        Ordering::Equal
    }
}

impl Sub for Quadratic {
    type Output = Quadratic;

    fn sub(self, rhs: Quadratic) -> Quadratic {
        Quadratic {
            quad: self.quad - rhs.quad,
            lin: self.lin - rhs.lin,
            constant: self.constant - rhs.constant,
        }
    }
}

/// Segment cost as a bivariate quadratic in the start value `s` and end
/// value `e` of the fitted line:
///
/// `end_sq*e^2 + cross*s*e + end_lin*e + constant + start_lin*s + start_sq*s^2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegmentQuadratic {
    pub end_sq: f64,
    pub cross: f64,
    pub end_lin: f64,
    pub constant: f64,
    pub start_lin: f64,
    pub start_sq: f64,
}

impl SegmentQuadratic {
    pub fn eval(&self, start: f64, end: f64) -> f64 {
        self.end_sq * end * end
            + self.cross * start * end
            + self.end_lin * end
            + self.constant
            + self.start_lin * start
            + self.start_sq * start * start
    }
}

/// Eliminates the segment start value:
/// `min_s [prev(s) + seg(s, e)] + beta + length_penalty`, as a quadratic in `e`.
pub fn minimize_out_start(
    prev: &Quadratic,
    seg: &SegmentQuadratic,
    beta: f64,
    length_penalty: f64,
) -> Result<Quadratic> {
    let q = prev.quad + seg.start_sq;
    let l = prev.lin + seg.start_lin;
    let offset = prev.constant + seg.constant + beta + length_penalty;
    if q > 0.0 {
        Ok(Quadratic {
            quad: seg.end_sq - seg.cross * seg.cross / (4.0 * q),
            lin: seg.end_lin - seg.cross * l / (2.0 * q),
            constant: offset - l * l / (4.0 * q),
        })
    } else if q == 0.0 {
        if l == 0.0 && seg.cross == 0.0 {
            Ok(Quadratic {
                quad: seg.end_sq,
                lin: seg.end_lin,
                constant: offset,
            })
        } else {
            Err(Error::UnboundedBelow)
        }
    } else {
        Err(Error::NegativeCurvature)
    }
}
