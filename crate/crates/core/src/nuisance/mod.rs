//! Nuisance regressions used by the efficient estimator.
//!
//! Four functions are fitted on a training fold:
//!
//! | name  | subgroup           | target            |
//! |-------|--------------------|-------------------|
//! | `q`   | `z = 1`            | `t`               |
//! | `mu1` | `z = 1, t = 1`     | `u(y, tau1)`      |
//! | `mu2` | `z = 1, t = 0`     | `u(y, tau0)`      |
//! | `mu3` | `z = 0`            | `u(y, tau0)`      |
//!
//! The `mu` predictors return conditional expectations of `u` *without* the
//! inverse-derivative factor; callers apply it.

use std::fmt;

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Estimand, ObservedSample};
use crate::roots::Curve;

pub mod kernel;
pub mod mlp;
pub mod oracle;

pub use kernel::{default_bandwidth, fit_nuisances_kernel, kernel_function, kernel_regress, KernelLearner, KernelSpec};
pub use mlp::{fit_nuisances_mlp, MlpConfig, MlpLearner, MlpLoss};
pub use oracle::{oracle_nuisances, OracleLearner, OracleMu, OracleNuisances};

/// Which of the four nuisance functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Nuisance {
    Q,
    Mu1,
    Mu2,
    Mu3,
}

impl Nuisance {
    pub const ALL: [Nuisance; 4] = [Nuisance::Q, Nuisance::Mu1, Nuisance::Mu2, Nuisance::Mu3];

    /// Whether row `(z, t)` belongs to this nuisance's training subgroup.
    pub fn contains(self, z: f64, t: f64) -> bool {
        match self {
            Nuisance::Q => z == 1.0,
            Nuisance::Mu1 => z == 1.0 && t == 1.0,
            Nuisance::Mu2 => z == 1.0 && t == 0.0,
            Nuisance::Mu3 => z == 0.0,
        }
    }

    /// Row indices of the subgroup in `s`.
    pub fn rows(self, s: &ObservedSample) -> Vec<usize> {
        (0..s.n())
            .filter(|&i| self.contains(s.z()[i], s.t()[i]))
            .collect()
    }
}

impl fmt::Display for Nuisance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Nuisance::Q => "q",
            Nuisance::Mu1 => "mu1",
            Nuisance::Mu2 => "mu2",
            Nuisance::Mu3 => "mu3",
        })
    }
}

/// Subgroup rows for all four nuisances, checking that each is nonempty.
///
/// When every assigned unit complied, the `mu2` subgroup is empty, but then
/// `1 - q` vanishes on the whole fold and `mu2` never enters the equations;
/// in that case `None` is returned for it instead of an error.
pub(crate) struct Subgroups {
    pub q: Vec<usize>,
    pub mu1: Vec<usize>,
    pub mu2: Option<Vec<usize>>,
    pub mu3: Vec<usize>,
}

pub(crate) fn subgroups(s: &ObservedSample) -> Result<Subgroups> {
    let mu3 = Nuisance::Mu3.rows(s);
    if mu3.is_empty() {
        return Err(Error::EmptySubgroup(Nuisance::Mu3));
    }
    let q = Nuisance::Q.rows(s);
    if q.is_empty() {
        return Err(Error::EmptySubgroup(Nuisance::Q));
    }
    let mu1 = Nuisance::Mu1.rows(s);
    if mu1.is_empty() {
        return Err(Error::EmptySubgroup(Nuisance::Mu1));
    }
    let mu2 = Nuisance::Mu2.rows(s);
    Ok(Subgroups {
        q,
        mu1,
        mu2: (!mu2.is_empty()).then_some(mu2),
        mu3,
    })
}

/// Predictions of one `mu` function at a fixed set of evaluation rows, as a
/// function of tau.
pub trait MuColumn: Send + Sync {
    /// `E{u(Y, tau) | subgroup, x_i}` for every evaluation row.
    fn values(&self, tau: f64) -> Vec<f64>;

    /// `sum_i coef_i * values(tau)_i` as a curve in tau.
    fn curve(&self, coef: &[f64]) -> Curve<'_>;
}

/// A fitted set of nuisance functions.
pub trait NuisanceModel: Send + Sync {
    /// Compliance score at each row of `x`, in `[0, 1]`.
    fn q_values(&self, x: ArrayView2<'_, f64>) -> Vec<f64>;

    fn mu_column<'a>(&'a self, which: Nuisance, x: ArrayView2<'a, f64>) -> Box<dyn MuColumn + 'a>;
}

/// A fitted model plus bookkeeping.
pub struct NuisancePredictors {
    pub model: Box<dyn NuisanceModel>,
    pub label: String,
    pub fold: Option<usize>,
    pub notes: Vec<String>,
}

impl NuisancePredictors {
    pub fn new(model: Box<dyn NuisanceModel>, label: impl Into<String>) -> Self {
        Self {
            model,
            label: label.into(),
            fold: None,
            notes: Vec::new(),
        }
    }

    pub fn q(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        self.model.q_values(x)
    }

    /// `mu` values at a single tau.
    pub fn mu<'a>(&'a self, which: Nuisance, x: ArrayView2<'a, f64>, tau: f64) -> Vec<f64> {
        self.model.mu_column(which, x).values(tau)
    }
}

impl fmt::Debug for NuisancePredictors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NuisancePredictors")
            .field("label", &self.label)
            .field("fold", &self.fold)
            .field("notes", &self.notes)
            .finish()
    }
}

/// Something that can fit nuisance functions on a training fold.
pub trait Learner: Send + Sync {
    fn label(&self) -> String;

    /// True for learners that ignore the data (true functions supplied by
    /// the caller).
    fn is_oracle(&self) -> bool {
        false
    }

    /// `tau1_init` and `tau0_init` are only used where the target has to be
    /// fixed before fitting (quantile targets of non-kernel learners).
    fn fit(
        &self,
        train: &ObservedSample,
        spec: &Estimand,
        tau1_init: f64,
        tau0_init: f64,
        seed: u64,
    ) -> Result<NuisancePredictors>;
}

/// `mu` column whose values do not depend on tau beyond the mean shift:
/// `values(tau) = fitted - tau` for the mean estimand, and the frozen
/// `fitted` values for a quantile target fixed at fit time.
pub(crate) struct FittedColumn {
    pub fitted: Vec<f64>,
    pub shift: bool,
}

impl MuColumn for FittedColumn {
    fn values(&self, tau: f64) -> Vec<f64> {
        if self.shift {
            self.fitted.iter().map(|m| m - tau).collect()
        } else {
            self.fitted.clone()
        }
    }

    fn curve(&self, coef: &[f64]) -> Curve<'_> {
        let intercept: f64 = coef.iter().zip(&self.fitted).map(|(c, m)| c * m).sum();
        let slope = if self.shift { -coef.iter().sum::<f64>() } else { 0.0 };
        Curve::Affine { intercept, slope }
    }
}

/// A column that is identically zero.
pub(crate) struct ZeroColumn {
    pub n: usize,
}

impl MuColumn for ZeroColumn {
    fn values(&self, _tau: f64) -> Vec<f64> {
        vec![0.0; self.n]
    }

    fn curve(&self, _coef: &[f64]) -> Curve<'_> {
        Curve::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Propensity;

    #[test]
    fn no_controls_reports_mu3() {
        let s = ObservedSample::without_covariates(
            vec![1.0; 3],
            vec![1.0; 3],
            vec![1.0, 2.0, 3.0],
            Propensity::Constant(0.5),
        )
        .unwrap();
        assert_eq!(subgroups(&s).err(), Some(Error::EmptySubgroup(Nuisance::Mu3)));
    }

    #[test]
    fn full_compliance_skips_mu2() {
        let s = ObservedSample::without_covariates(
            vec![1.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0],
            vec![1.0, 2.0, 3.0],
            Propensity::Constant(0.5),
        )
        .unwrap();
        let g = subgroups(&s).unwrap();
        assert!(g.mu2.is_none());
        assert_eq!(g.mu1, vec![0, 1]);
    }

    #[test]
    fn fitted_column_curve_matches_values() {
        let col = FittedColumn {
            fitted: vec![1.0, 3.0],
            shift: true,
        };
        let coef = [0.5, -2.0];
        let c = col.curve(&coef);
        for tau in [-1.0, 0.0, 2.5] {
            let direct: f64 = col.values(tau).iter().zip(coef).map(|(m, c)| m * c).sum();
            assert!((c.value(tau) - direct).abs() < 1e-12);
        }
    }
}
