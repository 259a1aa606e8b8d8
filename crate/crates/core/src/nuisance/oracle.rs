//! Nuisance functions supplied directly by the caller, typically the true
//! functions of a simulation design.

use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2};

use crate::error::Result;
use crate::model::{Estimand, ObservedSample};
use crate::nuisance::{FittedColumn, Learner, MuColumn, Nuisance, NuisanceModel, NuisancePredictors, ZeroColumn};
use crate::roots::Curve;

pub type CovariateFn = Arc<dyn Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync>;
pub type MomentFn = Arc<dyn Fn(ArrayView1<'_, f64>, f64) -> f64 + Send + Sync>;

/// How a `mu` function is supplied.
#[derive(Clone)]
pub enum OracleMu {
    /// Conditional mean of the outcome; the moment is `f(x) - tau`. Only
    /// meaningful for the mean estimand.
    Outcome(CovariateFn),
    /// `E{u(Y, tau) | subgroup, x}` as a function of `(x, tau)`.
    Moment(MomentFn),
    /// Identically zero.
    Zero,
}

impl OracleMu {
    pub fn outcome(f: impl Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync + 'static) -> Self {
        OracleMu::Outcome(Arc::new(f))
    }

    pub fn moment(f: impl Fn(ArrayView1<'_, f64>, f64) -> f64 + Send + Sync + 'static) -> Self {
        OracleMu::Moment(Arc::new(f))
    }
}

/// Four caller-supplied nuisance functions.
#[derive(Clone)]
pub struct OracleNuisances {
    pub q: CovariateFn,
    pub mu1: OracleMu,
    pub mu2: OracleMu,
    pub mu3: OracleMu,
}

impl OracleNuisances {
    pub fn new(
        q: impl Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync + 'static,
        mu1: OracleMu,
        mu2: OracleMu,
        mu3: OracleMu,
    ) -> Self {
        Self {
            q: Arc::new(q),
            mu1,
            mu2,
            mu3,
        }
    }

    /// All three `mu` functions zero. The augmentation terms then vanish and
    /// the efficient equations reduce to the simple ones.
    pub fn zero() -> Self {
        Self::new(|_| 0.0, OracleMu::Zero, OracleMu::Zero, OracleMu::Zero)
    }

    fn mu(&self, which: Nuisance) -> &OracleMu {
        match which {
            Nuisance::Mu1 => &self.mu1,
            Nuisance::Mu2 => &self.mu2,
            Nuisance::Mu3 => &self.mu3,
            Nuisance::Q => &OracleMu::Zero,
        }
    }
}

impl NuisanceModel for OracleNuisances {
    fn q_values(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| (self.q)(r).clamp(0.0, 1.0)).collect()
    }

    fn mu_column<'a>(&'a self, which: Nuisance, x: ArrayView2<'a, f64>) -> Box<dyn MuColumn + 'a> {
        match self.mu(which) {
            OracleMu::Outcome(f) => Box::new(FittedColumn {
                fitted: x.rows().into_iter().map(|r| f(r)).collect(),
                shift: true,
            }),
            OracleMu::Moment(f) => Box::new(MomentColumn { f: f.clone(), x }),
            OracleMu::Zero => Box::new(ZeroColumn { n: x.nrows() }),
        }
    }
}

struct MomentColumn<'a> {
    f: MomentFn,
    x: ArrayView2<'a, f64>,
}

impl MuColumn for MomentColumn<'_> {
    fn values(&self, tau: f64) -> Vec<f64> {
        self.x.rows().into_iter().map(|r| (self.f)(r, tau)).collect()
    }

    fn curve(&self, coef: &[f64]) -> Curve<'_> {
        let coef = coef.to_vec();
        Curve::Opaque(Box::new(move |tau| {
            self.x
                .rows()
                .into_iter()
                .zip(&coef)
                .map(|(r, c)| c * (self.f)(r, tau))
                .sum()
        }))
    }
}

/// Wraps caller-supplied functions as fitted nuisance predictors.
pub fn oracle_nuisances(
    true_q: impl Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync + 'static,
    true_mu1: OracleMu,
    true_mu2: OracleMu,
    true_mu3: OracleMu,
) -> NuisancePredictors {
    NuisancePredictors::new(
        Box::new(OracleNuisances::new(true_q, true_mu1, true_mu2, true_mu3)),
        "eff-oracle",
    )
}

/// A learner that ignores the data and returns fixed functions.
#[derive(Clone)]
pub struct OracleLearner {
    pub nuisances: OracleNuisances,
    pub label: String,
}

impl OracleLearner {
    pub fn new(nuisances: OracleNuisances) -> Self {
        Self {
            nuisances,
            label: "eff-oracle".into(),
        }
    }
}

impl Learner for OracleLearner {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn is_oracle(&self) -> bool {
        true
    }

    fn fit(
        &self,
        _train: &ObservedSample,
        _spec: &Estimand,
        _tau1_init: f64,
        _tau0_init: f64,
        _seed: u64,
    ) -> Result<NuisancePredictors> {
        Ok(NuisancePredictors::new(Box::new(self.nuisances.clone()), self.label.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn wraps_functions_unchanged() {
        let p = oracle_nuisances(
            |x| 0.25 + 0.1 * x[0],
            OracleMu::outcome(|x| 2.0 + 4.0 * x[0]),
            OracleMu::moment(|x, tau| x[0] - tau),
            OracleMu::Zero,
        );
        let x = array![[1.0], [2.0]];
        assert_eq!(p.q(x.view()), vec![0.35, 0.45]);
        assert_eq!(p.mu(Nuisance::Mu1, x.view(), 1.0), vec![5.0, 9.0]);
        assert_eq!(p.mu(Nuisance::Mu2, x.view(), 0.5), vec![0.5, 1.5]);
        assert_eq!(p.mu(Nuisance::Mu3, x.view(), 0.5), vec![0.0, 0.0]);
    }

    #[test]
    fn moment_curve_sums_values() {
        let model = OracleNuisances::new(|_| 1.0, OracleMu::moment(|x, tau| x[0] * tau), OracleMu::Zero, OracleMu::Zero);
        let x = array![[1.0], [3.0]];
        let col = model.mu_column(Nuisance::Mu1, x.view());
        assert_eq!(col.curve(&[2.0, -1.0]).value(2.0), 2.0 * 2.0 - 6.0);
    }
}
