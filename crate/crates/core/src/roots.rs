//! Zeros of weighted estimating equations.
//!
//! Every equation solved here has the form
//!
//! ```text
//! E(tau) = sum_i w_i u(y_i, tau) + sum_c C_c(tau)
//! ```
//!
//! where the `C_c` are augmentation curves built from nuisance predictions.
//! For the mean estimand with affine curves the zero has a closed form. For
//! quantiles `E` is a step function whenever the curves are steps or
//! constants, and the root is located exactly among its jump points. Anything
//! else falls back to bisection.

use crate::error::{Error, Result};
use crate::model::Estimand;

/// Bisection stops once the bracket is narrower than this.
pub const BISECTION_TOL: f64 = 1e-10;

/// Sums whose magnitude falls below this are treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// An additive augmentation term of an estimating equation, as a function of
/// tau.
pub enum Curve<'a> {
    /// `intercept + slope * tau`.
    Affine { intercept: f64, slope: f64 },
    /// `constant + sum_k weight_k * 1{location_k <= tau}`.
    Step {
        constant: f64,
        jumps: Vec<(f64, f64)>,
    },
    /// Anything else.
    Opaque(Box<dyn Fn(f64) -> f64 + Send + Sync + 'a>),
}

impl Curve<'_> {
    pub fn zero() -> Self {
        Curve::Affine {
            intercept: 0.0,
            slope: 0.0,
        }
    }

    pub fn value(&self, tau: f64) -> f64 {
        match self {
            Curve::Affine { intercept, slope } => intercept + slope * tau,
            Curve::Step { constant, jumps } => {
                constant
                    + jumps
                        .iter()
                        .filter(|(loc, _)| *loc <= tau)
                        .map(|(_, w)| w)
                        .sum::<f64>()
            }
            Curve::Opaque(f) => f(tau),
        }
    }
}

impl std::fmt::Debug for Curve<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Curve::Affine { intercept, slope } => f
                .debug_struct("Affine")
                .field("intercept", intercept)
                .field("slope", slope)
                .finish(),
            Curve::Step { constant, jumps } => f
                .debug_struct("Step")
                .field("constant", constant)
                .field("jumps", &jumps.len())
                .finish(),
            Curve::Opaque(_) => f.write_str("Opaque"),
        }
    }
}

/// A located zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub tau: f64,
    /// Equation value at `tau`.
    pub residual: f64,
    /// Largest absolute single-observation weight in the equation.
    pub max_weight: f64,
}

/// `sum_i w_i u(y_i, tau) + sum_c C_c(tau)`.
#[derive(Debug)]
pub struct EstimatingEquation<'a> {
    pub estimand: Estimand,
    pub y: &'a [f64],
    pub weights: Vec<f64>,
    pub curves: Vec<Curve<'a>>,
}

impl<'a> EstimatingEquation<'a> {
    pub fn new(estimand: Estimand, y: &'a [f64], weights: Vec<f64>) -> Self {
        debug_assert_eq!(y.len(), weights.len());
        Self {
            estimand,
            y,
            weights,
            curves: Vec::new(),
        }
    }

    pub fn with_curve(mut self, curve: Curve<'a>) -> Self {
        self.curves.push(curve);
        self
    }

    pub fn value(&self, tau: f64) -> f64 {
        let base: f64 = self
            .y
            .iter()
            .zip(&self.weights)
            .map(|(&y, &w)| w * self.estimand.u(y, tau))
            .sum();
        base + self.curves.iter().map(|c| c.value(tau)).sum::<f64>()
    }

    fn max_weight(&self) -> f64 {
        let base = self.weights.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
        self.curves.iter().fold(base, |m, c| match c {
            Curve::Step { jumps, .. } => jumps.iter().fold(m, |m, (_, w)| m.max(w.abs())),
            _ => m,
        })
    }

    /// Solves `E(tau) = 0`. A vanishing slope (mean) is reported as
    /// [`Error::SingularDenominator`]; callers remap it as appropriate.
    pub fn solve(&self) -> Result<Root> {
        let max_weight = self.max_weight();
        let all_affine = self
            .curves
            .iter()
            .all(|c| matches!(c, Curve::Affine { .. }));
        match self.estimand {
            Estimand::Mean if all_affine => {
                let (mut num, mut den) = (0.0, 0.0);
                for (&y, &w) in self.y.iter().zip(&self.weights) {
                    num += w * y;
                    den += w;
                }
                for c in &self.curves {
                    if let Curve::Affine { intercept, slope } = c {
                        num += intercept;
                        den -= slope;
                    }
                }
                if den.abs() < SINGULAR_TOL {
                    return Err(Error::SingularDenominator);
                }
                let tau = num / den;
                Ok(Root {
                    tau,
                    residual: self.value(tau),
                    max_weight,
                })
            }
            Estimand::Quantile { alpha } if self.is_step() => {
                let (tau, residual) = self.solve_step(alpha)?;
                Ok(Root {
                    tau,
                    residual,
                    max_weight,
                })
            }
            _ => {
                let tau = self.bisect()?;
                Ok(Root {
                    tau,
                    residual: self.value(tau),
                    max_weight,
                })
            }
        }
    }

    fn is_step(&self) -> bool {
        self.curves.iter().all(|c| match c {
            Curve::Step { .. } => true,
            Curve::Affine { slope, .. } => *slope == 0.0,
            Curve::Opaque(_) => false,
        })
    }

    /// Exact root of a step function: every jump where the sign changes is a
    /// candidate; the one with the smallest post-jump magnitude wins, ties
    /// going to the smallest location.
    fn solve_step(&self, alpha: f64) -> Result<(f64, f64)> {
        let mut constant = 0.0;
        let mut jumps: Vec<(f64, f64)> = Vec::with_capacity(self.y.len());
        for (&y, &w) in self.y.iter().zip(&self.weights) {
            constant -= alpha * w;
            if w != 0.0 {
                jumps.push((y, w));
            }
        }
        for c in &self.curves {
            match c {
                Curve::Step {
                    constant: c0,
                    jumps: js,
                } => {
                    constant += c0;
                    jumps.extend(js.iter().filter(|(_, w)| *w != 0.0).copied());
                }
                Curve::Affine { intercept, .. } => constant += intercept,
                Curve::Opaque(_) => unreachable!("checked by is_step"),
            }
        }
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Exact ties (value zero in exact arithmetic) must not be lost to
        // rounding in the running sum.
        let tol = 1e-12 * jumps.iter().fold(constant.abs(), |m, (_, w)| m + w.abs());
        let negative = |v: f64| v < -tol;

        let mut best: Option<(f64, f64)> = None;
        let mut value = constant;
        let mut k = 0;
        while k < jumps.len() {
            let loc = jumps[k].0;
            let before = value;
            while k < jumps.len() && jumps[k].0 == loc {
                value += jumps[k].1;
                k += 1;
            }
            if negative(before) != negative(value) {
                let residual = value.abs();
                // Locations are visited in increasing order, so strict `<`
                // keeps the smallest tau among ties.
                if best.is_none_or(|(_, r)| residual < r) {
                    best = Some((loc, value));
                }
            }
        }
        best.ok_or(Error::NoCrossing)
    }

    fn bisect(&self) -> Result<f64> {
        let (mut lo, mut hi) = self.bracket();
        let mut f_lo = self.value(lo);
        let f_hi = self.value(hi);
        if f_lo == 0.0 {
            return Ok(lo);
        }
        if f_hi == 0.0 {
            return Ok(hi);
        }
        if (f_lo < 0.0) == (f_hi < 0.0) {
            return Err(Error::NoCrossing);
        }
        for _ in 0..400 {
            if hi - lo <= BISECTION_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let f_mid = self.value(mid);
            if f_mid == 0.0 {
                return Ok(mid);
            }
            if (f_mid < 0.0) == (f_lo < 0.0) {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
            }
        }
        let (v_lo, v_hi) = (self.value(lo).abs(), self.value(hi).abs());
        Ok(if v_lo <= v_hi { lo } else { hi })
    }

    fn bracket(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &y in self.y {
            lo = lo.min(y);
            hi = hi.max(y);
        }
        for c in &self.curves {
            if let Curve::Step { jumps, .. } = c {
                for &(loc, _) in jumps {
                    lo = lo.min(loc);
                    hi = hi.max(loc);
                }
            }
        }
        if !lo.is_finite() {
            (-1.0, 1.0)
        } else if self.estimand == Estimand::Mean {
            // A mean-type root may sit outside the data range once negative
            // weights are involved; widen generously.
            let span = (hi - lo).max(1.0);
            (lo - 1e3 * span, hi + 1e3 * span)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    }
}
