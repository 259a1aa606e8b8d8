//! Observed data, estimands and the estimate type shared by every estimator.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::normal_critical_value;

/// Default clipping bound on the known propensity score.
pub const DEFAULT_PROPENSITY_CLIP: f64 = 0.01;

/// Known assignment probability `p(x) = P(Z = 1 | x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Propensity {
    Constant(f64),
    PerRow(Vec<f64>),
}

/// Unvalidated columns of a trial with one-sided noncompliance.
#[derive(Debug, Clone)]
pub struct RawColumns {
    /// `n x d` covariates; `d` may be zero.
    pub x: Array2<f64>,
    pub z: Vec<f64>,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub propensity: Propensity,
}

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    /// Reject propensities outside `[clip, 1 - clip]`.
    pub clip: f64,
    /// Covariate columns to center and scale to unit standard deviation.
    pub standardize: Vec<usize>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            clip: DEFAULT_PROPENSITY_CLIP,
            standardize: Vec::new(),
        }
    }
}

/// Location and scale removed from a standardized covariate column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnScaling {
    pub column: usize,
    pub mean: f64,
    pub sd: f64,
}

/// A validated sample `(X, Z, T, Y)` with known propensity values.
///
/// Invariants: `z` and `t` are 0/1, `t = 1` implies `z = 1`, every
/// propensity lies in `[clip, 1 - clip]`, and all columns have `n >= 1` rows.
#[derive(Debug, Clone)]
pub struct ObservedSample {
    x: Array2<f64>,
    z: Vec<f64>,
    t: Vec<f64>,
    y: Vec<f64>,
    p: Vec<f64>,
    scaling: Vec<ColumnScaling>,
}

impl ObservedSample {
    /// Validates columns with the default options.
    pub fn new(
        x: Array2<f64>,
        z: Vec<f64>,
        t: Vec<f64>,
        y: Vec<f64>,
        propensity: Propensity,
    ) -> Result<Self> {
        validate_sample(
            RawColumns {
                x,
                z,
                t,
                y,
                propensity,
            },
            &ValidationOptions::default(),
        )
    }

    /// Builds a sample without covariates.
    pub fn without_covariates(
        z: Vec<f64>,
        t: Vec<f64>,
        y: Vec<f64>,
        propensity: Propensity,
    ) -> Result<Self> {
        let n = z.len();
        Self::new(Array2::zeros((n, 0)), z, t, y, propensity)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Covariate dimension.
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// Standardization applied at construction, if any.
    pub fn scaling(&self) -> &[ColumnScaling] {
        &self.scaling
    }

    /// Rows selected by `indices` (repeats allowed, as in bootstrap draws).
    pub fn subset(&self, indices: &[usize]) -> ObservedSample {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        ObservedSample {
            x: self.x.select(Axis(0), indices),
            z: pick(&self.z),
            t: pick(&self.t),
            y: pick(&self.y),
            p: pick(&self.p),
            scaling: self.scaling.clone(),
        }
    }

    /// Copy of this sample with the outcome replaced; used for shift checks.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<ObservedSample> {
        if y.len() != self.n() {
            return Err(Error::LengthMismatch(format!(
                "y has {} rows, sample has {}",
                y.len(),
                self.n()
            )));
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row, column: "y" });
        }
        Ok(ObservedSample { y, ..self.clone() })
    }
}

/// Validates raw columns into an [`ObservedSample`].
pub fn validate_sample(raw: RawColumns, opts: &ValidationOptions) -> Result<ObservedSample> {
    let RawColumns {
        mut x,
        z,
        t,
        y,
        propensity,
    } = raw;
    let n = y.len();
    if z.len() != n || t.len() != n || x.nrows() != n {
        return Err(Error::LengthMismatch(format!(
            "x has {} rows, z {}, t {}, y {}",
            x.nrows(),
            z.len(),
            t.len(),
            n
        )));
    }
    let p = match propensity {
        Propensity::Constant(c) => vec![c; n],
        Propensity::PerRow(p) => {
            if p.len() != n {
                return Err(Error::LengthMismatch(format!(
                    "p has {} rows, y has {}",
                    p.len(),
                    n
                )));
            }
            p
        }
    };
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if !(opts.clip > 0.0 && opts.clip < 0.5) {
        return Err(Error::InvalidConfig(format!(
            "propensity clip {} not in (0, 0.5)",
            opts.clip
        )));
    }

    for i in 0..n {
        for (column, v) in [("z", z[i]), ("t", t[i])] {
            if v != 0.0 && v != 1.0 {
                return Err(Error::NonBinaryAssignment {
                    row: i,
                    column,
                    value: v,
                });
            }
        }
        if t[i] == 1.0 && z[i] == 0.0 {
            return Err(Error::OneSidedViolation { row: i });
        }
        if !y[i].is_finite() {
            return Err(Error::NonFinite { row: i, column: "y" });
        }
        if x.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, column: "x" });
        }
        if !(p[i] >= opts.clip && p[i] <= 1.0 - opts.clip) {
            return Err(Error::PropensityOutOfBounds {
                row: i,
                value: p[i],
                clip: opts.clip,
            });
        }
    }

    let mut scaling = Vec::with_capacity(opts.standardize.len());
    for &column in &opts.standardize {
        if column >= x.ncols() {
            return Err(Error::InvalidConfig(format!(
                "cannot standardize column {column}: only {} covariates",
                x.ncols()
            )));
        }
        let mut col = x.column_mut(column);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd == 0.0 {
            return Err(Error::ZeroVarianceCovariate(column));
        }
        col.mapv_inplace(|v| (v - mean) / sd);
        scaling.push(ColumnScaling { column, mean, sd });
    }

    Ok(ObservedSample {
        x,
        z,
        t,
        y,
        p,
        scaling,
    })
}

/// The moment function `u(y, tau)` defining the complier effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Estimand {
    /// `u = y - tau`: the complier average causal effect.
    Mean,
    /// `u = 1{y <= tau} - alpha`: the complier quantile causal effect.
    Quantile { alpha: f64 },
}

impl Estimand {
    pub fn quantile(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Estimand::Quantile { alpha })
        } else {
            Err(Error::InvalidConfig(format!(
                "quantile level {alpha} not in (0, 1)"
            )))
        }
    }

    #[inline]
    pub fn u(&self, y: f64, tau: f64) -> f64 {
        match *self {
            Estimand::Mean => y - tau,
            Estimand::Quantile { alpha } => {
                if y <= tau {
                    1.0 - alpha
                } else {
                    -alpha
                }
            }
        }
    }
}

/// `u(y, tau)` for the given estimand.
pub fn u_value(spec: &Estimand, y: f64, tau: f64) -> f64 {
    spec.u(y, tau)
}

/// Which estimator produced a [`CausalEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Simple,
    Efficient,
    Oracle,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Simple => "simple",
            Method::Efficient => "efficient",
            Method::Oracle => "oracle",
        })
    }
}

/// Inverse derivatives of the two estimating equations, and the taus they
/// were evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeMatrices {
    pub a1: f64,
    pub a0: f64,
    pub tau1: f64,
    pub tau0: f64,
}

/// Per-fold results of a cross-fitted estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldEstimate {
    pub fold: usize,
    pub n_eval: usize,
    pub tau1: f64,
    pub tau0: f64,
    pub residual_tau1: f64,
    pub residual_tau0: f64,
    pub a1: f64,
    pub a0: f64,
    pub learner_notes: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Value of the tau1 estimating equation (a sum, not a mean) at the
    /// solution; the largest across folds for cross-fitted estimates.
    pub residual_tau1: f64,
    pub residual_tau0: f64,
    /// Largest single-observation weight in the estimating equations; bounds
    /// the residual of step-function (quantile) roots.
    pub max_weight: f64,
    /// Empirical mean of the influence function at the estimate.
    pub influence_mean: f64,
    pub folds: Vec<FoldEstimate>,
    /// Standard error with the derivative terms re-evaluated on the full
    /// sample at the final taus.
    pub se_refreshed: Option<f64>,
    pub learner: Option<String>,
    pub warnings: Vec<String>,
}

/// An estimate of `tau = tau1 - tau0` with its standard error and interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CausalEstimate {
    pub tau1: f64,
    pub tau0: f64,
    pub tau: f64,
    pub se_tau: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub n_used: usize,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

impl CausalEstimate {
    /// Assembles an estimate; the interval is `tau -/+ z * se`.
    pub fn assemble(
        tau1: f64,
        tau0: f64,
        se_tau: f64,
        level: f64,
        n_used: usize,
        method: Method,
        diagnostics: Diagnostics,
    ) -> Self {
        let tau = tau1 - tau0;
        let half = normal_critical_value(level) * se_tau;
        CausalEstimate {
            tau1,
            tau0,
            tau,
            se_tau,
            ci_lower: tau - half,
            ci_upper: tau + half,
            level,
            n_used,
            method,
            diagnostics,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "confidence level {level} not in (0, 1)"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn four_rows() -> RawColumns {
        RawColumns {
            x: array![[0.1], [0.2], [0.3], [0.4]],
            z: vec![1.0, 1.0, 0.0, 0.0],
            t: vec![1.0, 0.0, 0.0, 0.0],
            y: vec![4.0, 2.0, 1.0, 1.0],
            propensity: Propensity::Constant(0.5),
        }
    }

    #[test]
    fn u_value_cases() {
        assert_eq!(u_value(&Estimand::Mean, 3.0, 3.0), 0.0);
        assert_eq!(u_value(&Estimand::quantile(0.5).unwrap(), 2.0, 5.0), 0.5);
        assert_eq!(u_value(&Estimand::Mean, 7.5, 2.5), 5.0);
        assert!(Estimand::quantile(1.0).is_err());
        assert!(Estimand::quantile(0.0).is_err());
    }

    #[test]
    fn well_formed_input_passes() {
        let s = validate_sample(four_rows(), &ValidationOptions::default()).unwrap();
        assert_eq!(s.n(), 4);
        assert_eq!(s.d(), 1);
        assert_eq!(s.p(), &[0.5; 4]);
    }

    #[test]
    fn one_sided_violation_rejected() {
        let err = ObservedSample::without_covariates(
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 0.0],
            Propensity::Constant(0.5),
        )
        .unwrap_err();
        assert_eq!(err, Error::OneSidedViolation { row: 1 });
    }

    #[test]
    fn propensity_bounds_enforced() {
        let mut raw = four_rows();
        raw.propensity = Propensity::PerRow(vec![0.5, 0.0, 0.5, 0.5]);
        let err = validate_sample(raw, &ValidationOptions::default()).unwrap_err();
        assert!(matches!(err, Error::PropensityOutOfBounds { row: 1, .. }));
    }

    #[test]
    fn non_binary_and_length_errors() {
        let mut raw = four_rows();
        raw.z[2] = 0.5;
        assert!(matches!(
            validate_sample(raw, &ValidationOptions::default()),
            Err(Error::NonBinaryAssignment { row: 2, column: "z", .. })
        ));
        let mut raw = four_rows();
        raw.y.pop();
        assert!(matches!(
            validate_sample(raw, &ValidationOptions::default()),
            Err(Error::LengthMismatch(_))
        ));
    }

    #[test]
    fn standardization_is_recorded() {
        let opts = ValidationOptions {
            standardize: vec![0],
            ..Default::default()
        };
        let s = validate_sample(four_rows(), &opts).unwrap();
        let col = s.x().column(0).to_vec();
        let mean: f64 = col.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert_eq!(s.scaling().len(), 1);
        assert!((s.scaling()[0].mean - 0.25).abs() < 1e-12);
    }

    #[test]
    fn interval_is_symmetric() {
        let est = CausalEstimate::assemble(3.0, 1.0, 0.5, 0.95, 10, Method::Simple, Diagnostics::default());
        assert_eq!(est.tau, 2.0);
        assert!((est.ci_upper - est.tau - 1.959964 * 0.5).abs() < 1e-6);
        assert!((est.tau - est.ci_lower - (est.ci_upper - est.tau)).abs() < 1e-12);
    }
}
