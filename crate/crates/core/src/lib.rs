//! Estimators of complier causal effects in randomized trials with
//! one-sided noncompliance.
//!
//! Units assigned to control cannot take the treatment (`T = Z W`, with `W`
//! the latent complier indicator), and the assignment probability `p(x)` is
//! known. The effect among compliers is defined through a moment function
//! `u(y, tau)`: the mean (`u = y - tau`) or an `alpha`-quantile
//! (`u = 1{y <= tau} - alpha`).
//!
//! Two estimators are provided:
//!
//! * [`simple_estimate`] weights outcomes by the known propensity and needs
//!   no regression fits.
//! * [`efficient_estimate`] adds an augmentation built from four nuisance
//!   regressions, fitted by cross-fitting with a kernel, a neural network, or
//!   known functions. It attains the semiparametric efficiency bound.
//!
//! ```
//! use cgce::{simple_estimate, Estimand, ObservedSample, Propensity};
//!
//! let s = ObservedSample::without_covariates(
//!     vec![1.0, 1.0, 0.0, 0.0],
//!     vec![1.0, 0.0, 0.0, 0.0],
//!     vec![4.0, 2.0, 1.0, 1.0],
//!     Propensity::Constant(0.5),
//! )?;
//! let est = simple_estimate(&s, &Estimand::Mean, 0.95)?;
//! assert_eq!(est.tau, est.tau1 - est.tau0);
//! # Ok::<(), cgce::Error>(())
//! ```

pub mod efficient;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod nuisance;
pub mod procedure;
pub mod resample;
pub mod roots;
pub mod seeds;
pub mod simple;
pub mod simulation;
pub mod stats;

pub use efficient::{
    efficient_estimate, eif_values, eif_variance, solve_robust, solve_tau0_efficient, solve_tau1_efficient,
    CrossFitPlan, NuisanceValues, SplitMode,
};
pub use error::{Error, Result};
pub use model::{
    u_value, validate_sample, CausalEstimate, DerivativeMatrices, Diagnostics, Estimand, FoldEstimate, Method,
    ObservedSample, Propensity, RawColumns, ValidationOptions, DEFAULT_PROPENSITY_CLIP,
};
pub use montecarlo::{run_monte_carlo, McConfig, McMethod, McReport, McRow};
pub use nuisance::{
    default_bandwidth, fit_nuisances_kernel, fit_nuisances_mlp, kernel_function, kernel_regress, oracle_nuisances,
    KernelLearner, KernelSpec, Learner, MlpConfig, MlpLearner, Nuisance, NuisancePredictors, OracleLearner, OracleMu,
    OracleNuisances,
};
pub use procedure::{FoldScheme, Procedure};
pub use resample::{bootstrap_map, BootstrapSummary};
pub use simple::{
    compute_derivative_matrices, estimate_marginals, estimate_rho_w, simple_estimate, simple_influence,
    solve_tau0_simple, solve_tau1_simple, wald_no_covariate, MarginalProbabilities,
};
pub use simulation::{generate_dataset, irwin_hall_pdf, true_effect, true_tau, Scenario, ScenarioSpec, SimulatedData};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/estimand.md")]
    mod estimand {}
    #[doc = include_str!("../../../book/src/simple.md")]
    mod simple {}
    #[doc = include_str!("../../../book/src/efficient.md")]
    mod efficient {}
    #[doc = include_str!("../../../book/src/learners.md")]
    mod learners {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
