//! The simple inverse-propensity estimator and its influence function.
//!
//! `tau1` solves `sum_i t_i u(y_i, tau) / p_i = 0` and `tau0` solves
//! `sum_i w0_i u(y_i, tau) = 0` with control weights
//! `w0_i = (1 - z_i) / (1 - p_i) - (z_i - t_i) / p_i`. Neither needs any
//! nonparametric fit, which also makes this the starting point of the
//! efficient estimator.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_level, CausalEstimate, DerivativeMatrices, Diagnostics, Estimand, Method, ObservedSample};
use crate::roots::{EstimatingEquation, Root, SINGULAR_TOL};
use crate::stats::{sample_sd, silverman_bandwidth, std_normal_pdf};

/// Estimated marginal probabilities of the compliance/assignment cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginalProbabilities {
    /// `P(W = 1)`, estimated by inverse-propensity weighting. May exceed one
    /// in finite samples.
    pub rho_w: f64,
    pub rho_z: f64,
    /// `P(W = 1, Z = 1) = P(T = 1)`.
    pub rho_11: f64,
    /// `P(W = 0, Z = 1) = P(T = 0, Z = 1)`.
    pub rho_01: f64,
}

impl MarginalProbabilities {
    pub fn rho_w_exceeds_one(&self) -> bool {
        self.rho_w > 1.0
    }
}

/// `n^-1 sum_i t_i / p_i`.
pub fn estimate_rho_w(s: &ObservedSample) -> f64 {
    tau1_weights(s).iter().sum::<f64>() / s.n() as f64
}

pub fn estimate_marginals(s: &ObservedSample) -> MarginalProbabilities {
    let n = s.n() as f64;
    let rho_z = s.z().iter().sum::<f64>() / n;
    let rho_11 = s.t().iter().sum::<f64>() / n;
    let rho_01 = s
        .z()
        .iter()
        .zip(s.t())
        .map(|(z, t)| (1.0 - t) * z)
        .sum::<f64>()
        / n;
    MarginalProbabilities {
        rho_w: estimate_rho_w(s),
        rho_z,
        rho_11,
        rho_01,
    }
}

/// `t_i / p_i`.
pub fn tau1_weights(s: &ObservedSample) -> Vec<f64> {
    s.t().iter().zip(s.p()).map(|(t, p)| t / p).collect()
}

/// `(1 - z_i) / (1 - p_i) - (z_i - t_i) / p_i`.
pub fn tau0_weights(s: &ObservedSample) -> Vec<f64> {
    s.z()
        .iter()
        .zip(s.t())
        .zip(s.p())
        .map(|((z, t), p)| (1.0 - z) / (1.0 - p) - (z - t) / p)
        .collect()
}

pub(crate) fn tau1_equation<'a>(s: &'a ObservedSample, spec: &Estimand) -> EstimatingEquation<'a> {
    EstimatingEquation::new(*spec, s.y(), tau1_weights(s))
}

pub(crate) fn tau0_equation<'a>(s: &'a ObservedSample, spec: &Estimand) -> EstimatingEquation<'a> {
    EstimatingEquation::new(*spec, s.y(), tau0_weights(s))
}

pub(crate) fn solve_tau1_root(s: &ObservedSample, spec: &Estimand) -> Result<Root> {
    if s.t().iter().all(|&t| t == 0.0) {
        return Err(Error::NoCompliersObserved);
    }
    tau1_equation(s, spec).solve()
}

pub(crate) fn solve_tau0_root(s: &ObservedSample, spec: &Estimand) -> Result<Root> {
    tau0_equation(s, spec).solve().map_err(|e| match e {
        Error::SingularDenominator => Error::DegenerateWeights,
        other => other,
    })
}

/// Zero of `sum_i t_i u(y_i, tau) / p_i`: the weighted mean (or weighted
/// `alpha`-quantile) of the treated outcomes with weights `1 / p_i`.
pub fn solve_tau1_simple(s: &ObservedSample, spec: &Estimand) -> Result<f64> {
    solve_tau1_root(s, spec).map(|r| r.tau)
}

/// Zero of `sum_i w0_i u(y_i, tau)`.
pub fn solve_tau0_simple(s: &ObservedSample, spec: &Estimand) -> Result<f64> {
    solve_tau0_root(s, spec).map(|r| r.tau)
}

/// Inverse derivatives `A1`, `A0` of the two equations (per observation).
///
/// For the mean these are `-1 / mean(t/p)` and `-1 / mean(w0)`. For a
/// quantile, `du/dtau` is a point mass at `y = tau`; it is smoothed with a
/// Gaussian kernel using Silverman's bandwidth over the observations that
/// carry weight in the corresponding equation.
pub fn compute_derivative_matrices(
    s: &ObservedSample,
    spec: &Estimand,
    tau1: f64,
    tau0: f64,
) -> Result<DerivativeMatrices> {
    if !tau1.is_finite() || !tau0.is_finite() {
        return Err(Error::InvalidConfig("non-finite tau".into()));
    }
    let w1 = tau1_weights(s);
    let w0 = tau0_weights(s);
    let (d1, d0) = match spec {
        Estimand::Mean => (-mean(&w1), -mean(&w0)),
        Estimand::Quantile { .. } => (
            weighted_density(s.y(), &w1, tau1)?,
            weighted_density(s.y(), &w0, tau0)?,
        ),
    };
    if d1.abs() < SINGULAR_TOL || d0.abs() < SINGULAR_TOL || !d1.is_finite() || !d0.is_finite() {
        return Err(Error::SingularDerivative);
    }
    Ok(DerivativeMatrices {
        a1: 1.0 / d1,
        a0: 1.0 / d0,
        tau1,
        tau0,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `n^-1 sum_i w_i K_h(y_i - at)` with a Gaussian kernel.
fn weighted_density(y: &[f64], w: &[f64], at: f64) -> Result<f64> {
    let support: Vec<f64> = y
        .iter()
        .zip(w)
        .filter(|(_, w)| **w != 0.0)
        .map(|(y, _)| *y)
        .collect();
    let sd = sample_sd(&support).ok_or(Error::SingularDerivative)?;
    let h = silverman_bandwidth(sd, support.len());
    if h <= 0.0 {
        return Err(Error::SingularDerivative);
    }
    let total: f64 = y
        .iter()
        .zip(w)
        .map(|(&yi, &wi)| wi * std_normal_pdf((yi - at) / h) / h)
        .sum();
    Ok(total / y.len() as f64)
}

/// Per-observation influence values
/// `-A1 u(y, tau1) t / p + A0 u(y, tau0) w0`.
pub fn simple_influence(
    s: &ObservedSample,
    spec: &Estimand,
    tau1: f64,
    tau0: f64,
    a: &DerivativeMatrices,
) -> Vec<f64> {
    let w0 = tau0_weights(s);
    (0..s.n())
        .map(|i| {
            let y = s.y()[i];
            -a.a1 * spec.u(y, tau1) * s.t()[i] / s.p()[i] + a.a0 * spec.u(y, tau0) * w0[i]
        })
        .collect()
}

/// `sqrt(mean(phi^2) / n)`.
pub(crate) fn influence_se(phi: &[f64]) -> f64 {
    let n = phi.len() as f64;
    (phi.iter().map(|v| v * v).sum::<f64>() / n / n).sqrt()
}

/// The simple estimate `tau1 - tau0` with its influence-function standard
/// error.
pub fn simple_estimate(s: &ObservedSample, spec: &Estimand, level: f64) -> Result<CausalEstimate> {
    check_level(level)?;
    let r1 = solve_tau1_root(s, spec)?;
    let r0 = solve_tau0_root(s, spec)?;
    let a = compute_derivative_matrices(s, spec, r1.tau, r0.tau)?;
    let phi = simple_influence(s, spec, r1.tau, r0.tau, &a);
    let marginals = estimate_marginals(s);
    let mut warnings = Vec::new();
    if marginals.rho_w_exceeds_one() {
        warnings.push(format!("estimated P(W = 1) = {:.4} exceeds one", marginals.rho_w));
    }
    let diagnostics = Diagnostics {
        residual_tau1: r1.residual,
        residual_tau0: r0.residual,
        max_weight: r1.max_weight.max(r0.max_weight),
        influence_mean: mean(&phi),
        warnings,
        ..Default::default()
    };
    Ok(CausalEstimate::assemble(
        r1.tau,
        r0.tau,
        influence_se(&phi),
        level,
        s.n(),
        Method::Simple,
        diagnostics,
    ))
}

/// The classical no-covariate ratio estimator
/// `{mean(y | z = 1) - mean(y | z = 0)} / (sum t / sum z)`.
pub fn wald_no_covariate(s: &ObservedSample) -> Result<f64> {
    let (mut n1, mut n0, mut sy1, mut sy0, mut st) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..s.n() {
        let (z, y) = (s.z()[i], s.y()[i]);
        n1 += z;
        n0 += 1.0 - z;
        sy1 += z * y;
        sy0 += (1.0 - z) * y;
        st += s.t()[i];
    }
    if n1 == 0.0 || n0 == 0.0 {
        return Err(Error::EmptyArm);
    }
    if st == 0.0 {
        return Err(Error::NoCompliersObserved);
    }
    Ok((sy1 / n1 - sy0 / n0) / (st / n1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Propensity;
    use approx::assert_relative_eq;

    fn sample(z: &[f64], t: &[f64], y: &[f64], p: Propensity) -> ObservedSample {
        ObservedSample::without_covariates(z.to_vec(), t.to_vec(), y.to_vec(), p).unwrap()
    }

    /// Grid search for the zero of a piecewise-linear function; independent
    /// of the closed forms.
    fn grid_zero(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let steps = 200_000;
        let mut best = (lo, f(lo).abs());
        for k in 0..=steps {
            let x = lo + (hi - lo) * k as f64 / steps as f64;
            let v = f(x).abs();
            if v < best.1 {
                best = (x, v);
            }
        }
        best.0
    }

    #[test]
    fn rho_w_examples() {
        let half = Propensity::Constant(0.5);
        assert_eq!(estimate_rho_w(&sample(&[1.0, 1.0, 0.0], &[0.0; 3], &[0.0; 3], half.clone())), 0.0);
        let s = sample(&[1.0, 1.0, 1.0, 0.0], &[1.0, 0.0, 1.0, 0.0], &[0.0; 4], half);
        assert_eq!(estimate_rho_w(&s), 1.0);
    }

    #[test]
    fn marginals_by_counting() {
        let s = sample(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0], &[0.0; 4], Propensity::Constant(0.5));
        let m = estimate_marginals(&s);
        assert_eq!((m.rho_z, m.rho_11, m.rho_01), (0.5, 0.25, 0.25));
        let s = sample(&[1.0; 3], &[1.0; 3], &[0.0; 3], Propensity::Constant(0.5));
        let m = estimate_marginals(&s);
        assert_eq!((m.rho_z, m.rho_11, m.rho_01), (1.0, 1.0, 0.0));
        assert!(m.rho_w_exceeds_one());
    }

    #[test]
    fn tau1_examples() {
        let s = sample(&[1.0, 1.0], &[1.0, 1.0], &[2.0, 4.0], Propensity::Constant(0.5));
        assert_eq!(solve_tau1_simple(&s, &Estimand::Mean).unwrap(), 3.0);

        let p = vec![0.25, 0.75];
        let s = sample(&[1.0, 1.0], &[1.0, 1.0], &[2.0, 4.0], Propensity::PerRow(p.clone()));
        let got = solve_tau1_simple(&s, &Estimand::Mean).unwrap();
        let oracle = grid_zero(|tau| (2.0 - tau) / p[0] + (4.0 - tau) / p[1], 0.0, 5.0);
        assert!((oracle - 2.5).abs() < 1e-4);
        assert_relative_eq!(got, 2.5, epsilon = 1e-12);

        let s = sample(&[1.0; 3], &[1.0; 3], &[1.0, 2.0, 3.0], Propensity::Constant(0.5));
        assert_eq!(solve_tau1_simple(&s, &Estimand::quantile(0.5).unwrap()).unwrap(), 2.0);

        let s = sample(&[1.0, 0.0], &[0.0, 0.0], &[1.0, 2.0], Propensity::Constant(0.5));
        assert_eq!(solve_tau1_simple(&s, &Estimand::Mean), Err(Error::NoCompliersObserved));
    }

    #[test]
    fn tau0_examples() {
        let half = Propensity::Constant(0.5);
        let s = sample(&[0.0, 0.0], &[0.0, 0.0], &[2.0, 4.0], half.clone());
        assert_eq!(solve_tau0_simple(&s, &Estimand::Mean).unwrap(), 3.0);

        let s = sample(&[1.0, 0.0, 0.0], &[0.0; 3], &[2.0, 4.0, 6.0], half.clone());
        let oracle = grid_zero(|tau| -2.0 * (2.0 - tau) + 2.0 * (4.0 - tau) + 2.0 * (6.0 - tau), 0.0, 10.0);
        assert!((oracle - 8.0).abs() < 1e-4);
        assert_relative_eq!(solve_tau0_simple(&s, &Estimand::Mean).unwrap(), 8.0, epsilon = 1e-12);

        let s = sample(&[1.0, 0.0], &[0.0, 0.0], &[2.0, 4.0], half);
        assert_eq!(solve_tau0_simple(&s, &Estimand::Mean), Err(Error::DegenerateWeights));
    }

    #[test]
    fn derivative_examples() {
        let half = Propensity::Constant(0.5);
        let s = sample(&[1.0, 1.0], &[1.0, 1.0], &[0.0, 0.0], half.clone());
        // w0 sums to zero here, so only check a1 through the mean branch.
        assert_eq!(-1.0 / mean(&tau1_weights(&s)), -0.5);

        let s = sample(&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0], &[1.0, 2.0, 3.0], half);
        let a = compute_derivative_matrices(&s, &Estimand::Mean, 0.0, 0.0).unwrap();
        // Finite difference of n^-1 sum w0 (y - tau) in tau.
        let w0 = tau0_weights(&s);
        let f = |tau: f64| w0.iter().zip(s.y()).map(|(w, y)| w * (y - tau)).sum::<f64>() / 3.0;
        let slope = (f(1.0) - f(-1.0)) / 2.0;
        assert_relative_eq!(a.a0, 1.0 / slope, epsilon = 1e-12);
        assert_relative_eq!(a.a0, -0.75, epsilon = 1e-12);
        // mean(t / p) = 2/3
        assert_relative_eq!(a.a1, -1.5, epsilon = 1e-12);
    }

    #[test]
    fn simple_estimate_influence_has_zero_mean() {
        let s = sample(
            &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0],
            &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            &[4.0, 2.0, 5.0, 1.0, 1.5, 2.5],
            Propensity::PerRow(vec![0.6, 0.4, 0.5, 0.3, 0.7, 0.5]),
        );
        let est = simple_estimate(&s, &Estimand::Mean, 0.95).unwrap();
        assert!(est.diagnostics.influence_mean.abs() < 1e-8);
        assert_eq!(est.tau, est.tau1 - est.tau0);
        assert!(est.ci_lower <= est.tau && est.tau <= est.ci_upper);
    }

    #[test]
    fn wald_examples() {
        let s = sample(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0], &[4.0, 2.0, 1.0, 1.0], Propensity::Constant(0.5));
        assert_eq!(wald_no_covariate(&s).unwrap(), 4.0);
        let s = sample(&[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0], &[4.0, 2.0, 1.0], Propensity::Constant(0.5));
        assert_eq!(wald_no_covariate(&s).unwrap(), 2.0);
        let s = sample(&[1.0, 1.0], &[1.0, 0.0], &[4.0, 2.0], Propensity::Constant(0.5));
        assert_eq!(wald_no_covariate(&s), Err(Error::EmptyArm));
    }
}
