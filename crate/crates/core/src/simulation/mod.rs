//! Simulation designs with known complier effects.
//!
//! Covariates `X_j ~ Uniform(1, 5 - sqrt(d))` enter only through their sum
//! `x0`. Assignment follows `p(x) = sin(pi x0)/4 + 1/2`, compliance
//! `q(x) = cos(2 pi x0)/4 + 1/2`, and `T = Z W`. Both potential outcomes
//! share the same standard normal noise.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{Estimand, ObservedSample, Propensity};
use crate::nuisance::{OracleLearner, OracleMu, OracleNuisances};
use crate::seeds::rng_from;

pub mod quadrature;

pub use self::quadrature::{integrate_piecewise, irwin_hall_pdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scenario {
    /// `Y1 = 2 + 4 x0 + e`, `Y0 = 1 + 2 x0 + e`.
    One,
    /// Outcomes depend on compliance type and on `x0^2`:
    /// `Y1 = 2 + 2W + (4 + 2W) x0 + 0.1 x0^2 + e`,
    /// `Y0 = 1 + W + (2 + W) x0 + 0.2 x0^2 + e`.
    Two,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::One => "1",
            Scenario::Two => "2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub d: usize,
    pub n: usize,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, d: usize, n: usize) -> Result<Self> {
        let spec = Self { scenario, d, n };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let allowed: &[usize] = match self.scenario {
            Scenario::One => &[1, 4, 9],
            Scenario::Two => &[4, 9],
        };
        if !allowed.contains(&self.d) {
            return Err(Error::InvalidConfig(format!(
                "scenario {} supports d in {allowed:?}, got {}",
                self.scenario, self.d
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        Ok(())
    }

    /// Upper end of each covariate's support; the lower end is 1.
    pub fn upper(&self) -> f64 {
        5.0 - (self.d as f64).sqrt()
    }

    /// Width of each covariate's support.
    fn width(&self) -> f64 {
        self.upper() - 1.0
    }

    /// Density of `x0`.
    pub fn x0_density(&self, x0: f64) -> f64 {
        let w = self.width();
        irwin_hall_pdf(self.d as u32, (x0 - self.d as f64) / w) / w
    }

    /// Support of `x0` and the points where its density changes polynomial
    /// piece.
    pub fn x0_support(&self) -> (f64, f64, Vec<f64>) {
        let (d, w) = (self.d as f64, self.width());
        let breaks = (0..=self.d).map(|k| d + k as f64 * w).collect();
        (d, d + d * w, breaks)
    }

    /// `E{g(X0)}`.
    pub fn expect_x0(&self, g: impl Fn(f64) -> f64) -> Result<f64> {
        let (a, b, breaks) = self.x0_support();
        integrate_piecewise(|x| g(x) * self.x0_density(x), a, b, &breaks)
    }
}

pub fn propensity_fn(x0: f64) -> f64 {
    (PI * x0).sin() / 4.0 + 0.5
}

pub fn compliance_fn(x0: f64) -> f64 {
    (2.0 * PI * x0).cos() / 4.0 + 0.5
}

/// Mean of the treated potential outcome given `x0` and compliance type.
fn y1_mean(scenario: Scenario, w: f64, x0: f64) -> f64 {
    match scenario {
        Scenario::One => 2.0 + 4.0 * x0,
        Scenario::Two => 2.0 + 2.0 * w + (4.0 + 2.0 * w) * x0 + 0.1 * x0 * x0,
    }
}

fn y0_mean(scenario: Scenario, w: f64, x0: f64) -> f64 {
    match scenario {
        Scenario::One => 1.0 + 2.0 * x0,
        Scenario::Two => 1.0 + w + (2.0 + w) * x0 + 0.2 * x0 * x0,
    }
}

/// The complier average effect, by one-dimensional integration over the law
/// of `x0`.
pub fn true_tau(spec: &ScenarioSpec) -> Result<f64> {
    spec.validate()?;
    let mass = spec.expect_x0(compliance_fn)?;
    let m1 = spec.expect_x0(|x| x * compliance_fn(x))? / mass;
    Ok(match spec.scenario {
        Scenario::One => 1.0 + 2.0 * m1,
        Scenario::Two => {
            let m2 = spec.expect_x0(|x| x * x * compliance_fn(x))? / mass;
            2.0 + 3.0 * m1 - 0.1 * m2
        }
    })
}

/// The complier effect for any estimand: [`true_tau`] for the mean, and for
/// a quantile the difference of the complier marginal quantiles, each found
/// by bisection on an integrated normal mixture CDF.
pub fn true_effect(spec: &ScenarioSpec, estimand: &Estimand) -> Result<f64> {
    let alpha = match *estimand {
        Estimand::Mean => return true_tau(spec),
        Estimand::Quantile { alpha } => alpha,
    };
    let sc = spec.scenario;
    let mass = spec.expect_x0(compliance_fn)?;
    let cdf = |v: f64| Normal::new(0.0, 1.0).unwrap().cdf(v);
    let (lo_x, hi_x, _) = spec.x0_support();
    let quantile = |mean: &dyn Fn(f64) -> f64| -> Result<f64> {
        let (a, b) = (mean(lo_x).min(mean(hi_x)), mean(lo_x).max(mean(hi_x)));
        let (mut lo, mut hi) = (a - 10.0, b + 10.0);
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            let f = spec.expect_x0(|x| compliance_fn(x) * cdf(mid - mean(x)))? / mass;
            if f < alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    };
    Ok(quantile(&|x| y1_mean(sc, 1.0, x))? - quantile(&|x| y0_mean(sc, 1.0, x))?)
}

/// A simulated sample with the latent quantities hidden from estimators.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub sample: ObservedSample,
    pub w: Vec<f64>,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
}

/// Draws a dataset; identical seeds give identical data.
pub fn generate_dataset(spec: &ScenarioSpec, seed: u64) -> Result<SimulatedData> {
    spec.validate()?;
    let mut rng = rng_from(seed);
    let (n, d) = (spec.n, spec.d);
    let upper = spec.upper();
    let mut x = Array2::zeros((n, d));
    let (mut z, mut t, mut y, mut p) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut w, mut y1, mut y0) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let mut x0 = 0.0;
        for j in 0..d {
            let v = rng.gen_range(1.0..upper);
            x[[i, j]] = v;
            x0 += v;
        }
        p[i] = propensity_fn(x0);
        z[i] = f64::from(rng.gen::<f64>() < p[i]);
        w[i] = f64::from(rng.gen::<f64>() < compliance_fn(x0));
        let e: f64 = StandardNormal.sample(&mut rng);
        y1[i] = y1_mean(spec.scenario, w[i], x0) + e;
        y0[i] = y0_mean(spec.scenario, w[i], x0) + e;
        t[i] = z[i] * w[i];
        y[i] = if t[i] == 1.0 { y1[i] } else { y0[i] };
    }
    let sample = ObservedSample::new(x, z, t, y, Propensity::PerRow(p))?;
    Ok(SimulatedData { sample, w, y1, y0 })
}

fn x0_of(x: ArrayView1<'_, f64>) -> f64 {
    x.sum()
}

/// True conditional outcome means of the three `mu` subgroups given `x0`:
/// compliers under treatment, never-takers assigned to treatment, and all
/// units assigned to control.
pub fn true_outcome_means(scenario: Scenario, x0: f64) -> (f64, f64, f64) {
    let q = compliance_fn(x0);
    (
        y1_mean(scenario, 1.0, x0),
        y0_mean(scenario, 0.0, x0),
        q * y0_mean(scenario, 1.0, x0) + (1.0 - q) * y0_mean(scenario, 0.0, x0),
    )
}

/// Oracle learner with the design's true nuisance functions.
///
/// For quantiles the noise is standard normal, so each conditional moment is
/// a normal CDF (a two-component mixture for the control arm when outcomes
/// depend on compliance type).
pub fn oracle_learner(spec: &ScenarioSpec, estimand: &Estimand) -> OracleLearner {
    let sc = spec.scenario;
    let q = move |x: ArrayView1<'_, f64>| compliance_fn(x0_of(x));
    let nuisances = match *estimand {
        Estimand::Mean => OracleNuisances::new(
            q,
            OracleMu::outcome(move |x| true_outcome_means(sc, x0_of(x)).0),
            OracleMu::outcome(move |x| true_outcome_means(sc, x0_of(x)).1),
            OracleMu::outcome(move |x| true_outcome_means(sc, x0_of(x)).2),
        ),
        Estimand::Quantile { alpha } => {
            let cdf = |v: f64| Normal::new(0.0, 1.0).unwrap().cdf(v);
            OracleNuisances::new(
                q,
                OracleMu::moment(move |x, tau| cdf(tau - y1_mean(sc, 1.0, x0_of(x))) - alpha),
                OracleMu::moment(move |x, tau| cdf(tau - y0_mean(sc, 0.0, x0_of(x))) - alpha),
                OracleMu::moment(move |x, tau| {
                    let x0 = x0_of(x);
                    let qv = compliance_fn(x0);
                    qv * cdf(tau - y0_mean(sc, 1.0, x0)) + (1.0 - qv) * cdf(tau - y0_mean(sc, 0.0, x0)) - alpha
                }),
            )
        }
    };
    OracleLearner::new(nuisances)
}
