//! The cross-fitted efficient estimator and the robust estimating-equation
//! family it belongs to.
//!
//! Every member of the family adds a term `phi(x) (z - p)` to the simple
//! influence function. That term has mean zero whatever `phi` is, because `p`
//! is the known assignment probability. The efficient choice of `phi` is
//! built from the nuisance functions, which are fitted on one part of the
//! sample and evaluated on another.

use ndarray::ArrayView1;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_level, CausalEstimate, DerivativeMatrices, Diagnostics, Estimand, FoldEstimate, Method, ObservedSample};
use crate::nuisance::{Learner, Nuisance, NuisancePredictors};
use crate::roots::{Curve, EstimatingEquation, Root};
use crate::seeds::{derive_seed, rng_from};
use crate::simple::{
    compute_derivative_matrices, estimate_rho_w, influence_se, simple_influence, solve_tau0_root, solve_tau1_root,
    tau0_weights, tau1_weights,
};
use crate::stats::mean;

/// How rows are assigned to folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SplitMode {
    /// Consecutive blocks in row order.
    Sequential,
    /// Blocks of a seeded random permutation.
    RandomPermutation(u64),
}

/// A partition of the rows into evaluation folds.
///
/// Each fold's nuisances are fitted on the other folds. The in-sample plan
/// (one fold, fitted and evaluated on the whole sample) is not a valid
/// cross-fitting scheme; it exists for algebraic identities that only hold
/// without splitting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossFitPlan {
    fold_of: Vec<usize>,
    k: usize,
    in_sample: bool,
    mode: SplitMode,
}

impl CrossFitPlan {
    /// `k` folds whose sizes differ by at most one; smaller folds first, so
    /// two folds have sizes `floor(n/2)` and `n - floor(n/2)`.
    pub fn new(n: usize, k: usize, mode: SplitMode) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
        }
        if n < k {
            return Err(Error::InvalidConfig(format!("{n} rows cannot fill {k} folds")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        if let SplitMode::RandomPermutation(seed) = mode {
            order.shuffle(&mut rng_from(seed));
        }
        let (base, extra) = (n / k, n % k);
        let mut fold_of = vec![0; n];
        let mut pos = 0;
        for fold in 0..k {
            let size = base + usize::from(fold >= k - extra);
            for &row in &order[pos..pos + size] {
                fold_of[row] = fold;
            }
            pos += size;
        }
        Ok(Self {
            fold_of,
            k,
            in_sample: false,
            mode,
        })
    }

    pub fn two_fold(n: usize, mode: SplitMode) -> Result<Self> {
        Self::new(n, 2, mode)
    }

    /// Nuisances fitted and evaluated on the full sample.
    pub fn no_split(n: usize) -> Self {
        Self {
            fold_of: vec![0; n],
            k: 1,
            in_sample: true,
            mode: SplitMode::Sequential,
        }
    }

    /// Same partition with fold labels reversed.
    pub fn relabeled(&self) -> Self {
        Self {
            fold_of: self.fold_of.iter().map(|f| self.k - 1 - f).collect(),
            ..self.clone()
        }
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> SplitMode {
        self.mode
    }

    pub fn is_in_sample(&self) -> bool {
        self.in_sample
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Rows evaluated in `fold`, ascending.
    pub fn eval_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    /// Rows the nuisances for `fold` are fitted on, ascending.
    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        if self.in_sample {
            return (0..self.n()).collect();
        }
        (0..self.n()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

/// `-q(x) (z - p) / p`: the coefficients multiplying `mu1` in the tau1
/// equation once the derivative factor is divided out.
fn tau1_coefficients(eval: &ObservedSample, q: &[f64]) -> Vec<f64> {
    (0..eval.n())
        .map(|i| {
            let p = eval.p()[i];
            -q[i] * (eval.z()[i] - p) / p
        })
        .collect()
}

/// Coefficients multiplying `mu3` and `mu2` in the tau0 equation.
fn tau0_coefficients(eval: &ObservedSample, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (0..eval.n())
        .map(|i| {
            let (p, dz) = (eval.p()[i], eval.z()[i] - eval.p()[i]);
            (dz / (1.0 - p), (1.0 - q[i]) * dz / p)
        })
        .unzip()
}

fn solve_tau1_with(pred: &NuisancePredictors, eval: &ObservedSample, spec: &Estimand, q: &[f64]) -> Result<Root> {
    let mu1 = pred.model.mu_column(Nuisance::Mu1, eval.x());
    let coef = tau1_coefficients(eval, q);
    let root = EstimatingEquation::new(*spec, eval.y(), tau1_weights(eval))
        .with_curve(mu1.curve(&coef))
        .solve();
    root
}

fn solve_tau0_with(pred: &NuisancePredictors, eval: &ObservedSample, spec: &Estimand, q: &[f64]) -> Result<Root> {
    let mu3 = pred.model.mu_column(Nuisance::Mu3, eval.x());
    let mu2 = pred.model.mu_column(Nuisance::Mu2, eval.x());
    let (c3, c2) = tau0_coefficients(eval, q);
    let root = EstimatingEquation::new(*spec, eval.y(), tau0_weights(eval))
        .with_curve(mu3.curve(&c3))
        .with_curve(mu2.curve(&c2))
        .solve();
    root.map_err(|e| match e {
        Error::SingularDenominator => Error::DegenerateWeights,
        other => other,
    })
}

/// Solves the efficient tau1 equation on `eval` with nuisances fitted
/// elsewhere:
///
/// `sum_i [ t_i u(y_i, tau) / p_i - mu1(x_i, tau) q(x_i) (z_i - p_i) / p_i ] = 0`.
///
/// The derivative factor multiplies every term and so does not affect the
/// root.
pub fn solve_tau1_efficient(pred: &NuisancePredictors, eval: &ObservedSample, spec: &Estimand) -> Result<f64> {
    let q = pred.q(eval.x());
    solve_tau1_with(pred, eval, spec, &q).map(|r| r.tau)
}

/// Solves the efficient tau0 equation on `eval`:
///
/// `sum_i [ w0_i u(y_i, tau) + {mu3/(1 - p_i) + mu2 (1 - q)/p_i} (z_i - p_i) ] = 0`.
pub fn solve_tau0_efficient(pred: &NuisancePredictors, eval: &ObservedSample, spec: &Estimand) -> Result<f64> {
    let q = pred.q(eval.x());
    solve_tau0_with(pred, eval, spec, &q).map(|r| r.tau)
}

/// Nuisance predictions at a set of rows, with `mu1` at one tau and `mu2`,
/// `mu3` at another.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceValues {
    pub q: Vec<f64>,
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub mu3: Vec<f64>,
}

impl NuisanceValues {
    pub fn evaluate(pred: &NuisancePredictors, s: &ObservedSample, tau1: f64, tau0: f64) -> Self {
        let x = s.x();
        Self {
            q: pred.q(x),
            mu1: pred.mu(Nuisance::Mu1, x, tau1),
            mu2: pred.mu(Nuisance::Mu2, x, tau0),
            mu3: pred.mu(Nuisance::Mu3, x, tau0),
        }
    }
}

/// Efficient influence values `phi1(x) (z - p) + phi_s` with
/// `phi1 = a1 mu1 q / p + a0 mu3 / (1 - p) + a0 mu2 (1 - q) / p`.
pub fn eif_values(
    s: &ObservedSample,
    spec: &Estimand,
    tau1: f64,
    tau0: f64,
    nuis: &NuisanceValues,
    a: &DerivativeMatrices,
) -> Vec<f64> {
    let base = simple_influence(s, spec, tau1, tau0, a);
    (0..s.n())
        .map(|i| {
            let (p, q) = (s.p()[i], nuis.q[i]);
            let phi1 = a.a1 * nuis.mu1[i] * q / p + a.a0 * nuis.mu3[i] / (1.0 - p) + a.a0 * nuis.mu2[i] * (1.0 - q) / p;
            phi1 * (s.z()[i] - p) + base[i]
        })
        .collect()
}

/// `n^-1 sum_i phi_eff(i)^2`.
pub fn eif_variance(
    s: &ObservedSample,
    spec: &Estimand,
    tau1: f64,
    tau0: f64,
    nuis: &NuisanceValues,
    a: &DerivativeMatrices,
) -> f64 {
    let phi = eif_values(s, spec, tau1, tau0, nuis, a);
    phi.iter().map(|v| v * v).sum::<f64>() / phi.len() as f64
}

/// Solves the robust equations with a fixed augmentation `phi(x) = (phi_a,
/// phi_b)`:
///
/// `-a1 u(y, tau1) t / p + phi_a(x) (z - p) = 0` and
/// `a0 u(y, tau0) w0 + phi_b(x) (z - p) = 0`,
///
/// with `a1`, `a0` evaluated at the simple estimates. `phi` includes the
/// derivative factors. The standard error uses the full influence
/// `phi_s + (phi_a + phi_b) (z - p)`.
pub fn solve_robust(
    s: &ObservedSample,
    spec: &Estimand,
    phi: impl Fn(ArrayView1<'_, f64>) -> (f64, f64),
    level: f64,
) -> Result<CausalEstimate> {
    check_level(level)?;
    let init1 = solve_tau1_root(s, spec)?.tau;
    let init0 = solve_tau0_root(s, spec)?.tau;
    let a = compute_derivative_matrices(s, spec, init1, init0)?;
    let (mut aug1, mut aug0) = (Vec::with_capacity(s.n()), Vec::with_capacity(s.n()));
    for i in 0..s.n() {
        let (fa, fb) = phi(s.row(i));
        let dz = s.z()[i] - s.p()[i];
        aug1.push(fa * dz);
        aug0.push(fb * dz);
    }
    let r1 = EstimatingEquation::new(*spec, s.y(), tau1_weights(s))
        .with_curve(Curve::Affine {
            intercept: -aug1.iter().sum::<f64>() / a.a1,
            slope: 0.0,
        })
        .solve()?;
    let r0 = EstimatingEquation::new(*spec, s.y(), tau0_weights(s))
        .with_curve(Curve::Affine {
            intercept: aug0.iter().sum::<f64>() / a.a0,
            slope: 0.0,
        })
        .solve()
        .map_err(|e| match e {
            Error::SingularDenominator => Error::DegenerateWeights,
            other => other,
        })?;
    let mut infl = simple_influence(s, spec, r1.tau, r0.tau, &a);
    for (v, (x1, x0)) in infl.iter_mut().zip(aug1.iter().zip(&aug0)) {
        *v += x1 + x0;
    }
    let diagnostics = Diagnostics {
        residual_tau1: r1.residual,
        residual_tau0: r0.residual,
        max_weight: r1.max_weight.max(r0.max_weight),
        influence_mean: mean(&infl),
        learner: Some("robust".into()),
        ..Default::default()
    };
    Ok(CausalEstimate::assemble(
        r1.tau,
        r0.tau,
        influence_se(&infl),
        level,
        s.n(),
        Method::Efficient,
        diagnostics,
    ))
}

struct FoldOutput {
    rows: Vec<usize>,
    estimate: FoldEstimate,
    max_weight: f64,
    phi: Vec<f64>,
    predictors: NuisancePredictors,
}

fn run_fold(
    s: &ObservedSample,
    spec: &Estimand,
    learner: &dyn Learner,
    plan: &CrossFitPlan,
    fold: usize,
    init: (f64, f64),
    seed: u64,
) -> Result<FoldOutput> {
    let rows = plan.eval_rows(fold);
    let train = s.subset(&plan.train_rows(fold));
    let eval = s.subset(&rows);
    let a = compute_derivative_matrices(&train, spec, init.0, init.1)?;
    let mut predictors = learner.fit(&train, spec, init.0, init.1, derive_seed(seed, &[fold as u64]))?;
    predictors.fold = Some(fold);
    let q = predictors.q(eval.x());
    let r1 = solve_tau1_with(&predictors, &eval, spec, &q)?;
    let r0 = solve_tau0_with(&predictors, &eval, spec, &q)?;
    let nuis = NuisanceValues::evaluate(&predictors, &eval, r1.tau, r0.tau);
    let phi = eif_values(&eval, spec, r1.tau, r0.tau, &nuis, &a);
    Ok(FoldOutput {
        estimate: FoldEstimate {
            fold,
            n_eval: rows.len(),
            tau1: r1.tau,
            tau0: r0.tau,
            residual_tau1: r1.residual,
            residual_tau0: r0.residual,
            a1: a.a1,
            a0: a.a0,
            learner_notes: predictors.notes.clone(),
        },
        rows,
        max_weight: r1.max_weight.max(r0.max_weight),
        phi,
        predictors,
    })
}

fn largest_magnitude(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |m: f64, v| if v.abs() > m.abs() { v } else { m })
}

/// Cross-fitted efficient estimate.
///
/// 1. The simple estimates give initial taus.
/// 2. For each fold, nuisances and derivative factors are fitted on the
///    other folds at the initial taus, and the efficient equations are solved
///    on the fold.
/// 3. Fold estimates are averaged.
/// 4. The standard error comes from the efficient influence values, each
///    computed with its own fold's solution and out-of-fold fits.
///
/// Folds run in parallel on the current rayon pool; the result does not
/// depend on the number of threads.
pub fn efficient_estimate(
    s: &ObservedSample,
    spec: &Estimand,
    learner: &dyn Learner,
    plan: &CrossFitPlan,
    level: f64,
    seed: u64,
) -> Result<CausalEstimate> {
    check_level(level)?;
    if plan.n() != s.n() {
        return Err(Error::LengthMismatch(format!(
            "cross-fit plan covers {} rows, sample has {}",
            plan.n(),
            s.n()
        )));
    }
    let init = (solve_tau1_root(s, spec)?.tau, solve_tau0_root(s, spec)?.tau);
    let folds: Vec<FoldOutput> = (0..plan.k())
        .into_par_iter()
        .map(|fold| run_fold(s, spec, learner, plan, fold, init, seed).map_err(|e| e.in_fold(fold)))
        .collect::<Result<_>>()?;

    let k = folds.len() as f64;
    let tau1 = folds.iter().map(|f| f.estimate.tau1).sum::<f64>() / k;
    let tau0 = folds.iter().map(|f| f.estimate.tau0).sum::<f64>() / k;
    let mut phi = vec![0.0; s.n()];
    for f in &folds {
        for (&row, &v) in f.rows.iter().zip(&f.phi) {
            phi[row] = v;
        }
    }

    let se_refreshed = compute_derivative_matrices(s, spec, tau1, tau0).ok().map(|a| {
        let mut refreshed = vec![0.0; s.n()];
        for f in &folds {
            let eval = s.subset(&f.rows);
            let nuis = NuisanceValues::evaluate(&f.predictors, &eval, tau1, tau0);
            for (&row, v) in f.rows.iter().zip(eif_values(&eval, spec, tau1, tau0, &nuis, &a)) {
                refreshed[row] = v;
            }
        }
        influence_se(&refreshed)
    });

    let mut warnings = Vec::new();
    let rho_w = estimate_rho_w(s);
    if rho_w > 1.0 {
        warnings.push(format!("estimated P(W = 1) = {rho_w:.4} exceeds one"));
    }
    if plan.is_in_sample() {
        warnings.push("nuisances fitted and evaluated on the same rows".into());
    }
    let diagnostics = Diagnostics {
        residual_tau1: largest_magnitude(folds.iter().map(|f| f.estimate.residual_tau1)),
        residual_tau0: largest_magnitude(folds.iter().map(|f| f.estimate.residual_tau0)),
        max_weight: folds.iter().map(|f| f.max_weight).fold(0.0, f64::max),
        influence_mean: mean(&phi),
        folds: folds.into_iter().map(|f| f.estimate).collect(),
        se_refreshed,
        learner: Some(learner.label()),
        warnings,
    };
    let method = if learner.is_oracle() {
        Method::Oracle
    } else {
        Method::Efficient
    };
    Ok(CausalEstimate::assemble(
        tau1,
        tau0,
        influence_se(&phi),
        level,
        s.n(),
        method,
        diagnostics,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Propensity;
    use crate::nuisance::{oracle_nuisances, OracleLearner, OracleMu, OracleNuisances};
    use crate::simple::{simple_estimate, solve_tau0_simple, solve_tau1_simple};
    use ndarray::Array2;

    fn toy(n: usize) -> ObservedSample {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| (i as f64 * 0.37).sin());
        let z: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 5 < 3) as u8 as f64).collect();
        let t: Vec<f64> = (0..n).map(|i| z[i] * ((i % 3 != 0) as u8 as f64)).collect();
        let y: Vec<f64> = (0..n).map(|i| x[[i, 0]] + t[i] * 2.0 + (i % 4) as f64 * 0.1).collect();
        ObservedSample::new(x, z, t, y, Propensity::Constant(0.6)).unwrap()
    }

    #[test]
    fn plan_partitions_rows() {
        for mode in [SplitMode::Sequential, SplitMode::RandomPermutation(3)] {
            let plan = CrossFitPlan::two_fold(11, mode).unwrap();
            let (a, b) = (plan.eval_rows(0), plan.eval_rows(1));
            assert_eq!((a.len(), b.len()), (5, 6));
            let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
            all.sort();
            assert_eq!(all, (0..11).collect::<Vec<_>>());
            assert_eq!(plan.train_rows(0), b);
        }
        assert_eq!(CrossFitPlan::two_fold(4, SplitMode::Sequential).unwrap().eval_rows(0), vec![0, 1]);
        assert!(CrossFitPlan::new(3, 1, SplitMode::Sequential).is_err());
    }

    #[test]
    fn zero_q_reduces_tau1_to_simple() {
        let s = toy(40);
        let pred = oracle_nuisances(|_| 0.0, OracleMu::outcome(|x| 5.0 * x[0]), OracleMu::Zero, OracleMu::Zero);
        assert_eq!(
            solve_tau1_efficient(&pred, &s, &Estimand::Mean).unwrap(),
            solve_tau1_simple(&s, &Estimand::Mean).unwrap()
        );
        let pred = oracle_nuisances(|_| 0.4, OracleMu::Zero, OracleMu::Zero, OracleMu::Zero);
        let spec = Estimand::quantile(0.4).unwrap();
        assert_eq!(solve_tau0_efficient(&pred, &s, &spec).unwrap(), solve_tau0_simple(&s, &spec).unwrap());
    }

    #[test]
    fn mean_closed_form_matches_bisection() {
        let s = toy(60);
        let affine = oracle_nuisances(
            |x| 0.5 + 0.2 * x[0],
            OracleMu::outcome(|x| 1.0 + x[0]),
            OracleMu::outcome(|x| 2.0 * x[0]),
            OracleMu::outcome(|x| 0.5 - x[0]),
        );
        let opaque = oracle_nuisances(
            |x| 0.5 + 0.2 * x[0],
            OracleMu::moment(|x, tau| 1.0 + x[0] - tau),
            OracleMu::moment(|x, tau| 2.0 * x[0] - tau),
            OracleMu::moment(|x, tau| 0.5 - x[0] - tau),
        );
        let spec = Estimand::Mean;
        let (c1, b1) = (
            solve_tau1_efficient(&affine, &s, &spec).unwrap(),
            solve_tau1_efficient(&opaque, &s, &spec).unwrap(),
        );
        let (c0, b0) = (
            solve_tau0_efficient(&affine, &s, &spec).unwrap(),
            solve_tau0_efficient(&opaque, &s, &spec).unwrap(),
        );
        assert!((c1 - b1).abs() < 1e-8, "{c1} vs {b1}");
        assert!((c0 - b0).abs() < 1e-8, "{c0} vs {b0}");
    }

    #[test]
    fn zero_phi_is_simple() {
        let s = toy(50);
        for spec in [Estimand::Mean, Estimand::quantile(0.3).unwrap()] {
            let robust = solve_robust(&s, &spec, |_| (0.0, 0.0), 0.95).unwrap();
            let simple = simple_estimate(&s, &spec, 0.95).unwrap();
            assert_eq!((robust.tau1, robust.tau0), (simple.tau1, simple.tau0));
            assert!((robust.se_tau - simple.se_tau).abs() < 1e-12);
        }
    }

    #[test]
    fn eif_mean_vanishes_at_solution() {
        let s = toy(80);
        let learner = OracleLearner::new(OracleNuisances::new(
            |x| 0.6 + 0.1 * x[0],
            OracleMu::outcome(|x| 2.0 + x[0]),
            OracleMu::outcome(|x| x[0]),
            OracleMu::outcome(|x| 0.3 * x[0]),
        ));
        let plan = CrossFitPlan::two_fold(s.n(), SplitMode::RandomPermutation(1)).unwrap();
        let est = efficient_estimate(&s, &Estimand::Mean, &learner, &plan, 0.95, 0).unwrap();
        assert!(est.diagnostics.influence_mean.abs() < 1e-10);
        assert_eq!(est.method, Method::Oracle);
        assert!(est.diagnostics.residual_tau1.abs() < 1e-8 * s.n() as f64);
        assert!(est.diagnostics.se_refreshed.is_some());
    }
}
