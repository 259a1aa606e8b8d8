//! Nonparametric bootstrap over the rows of a sample.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CausalEstimate, ObservedSample};
use crate::procedure::with_workers;
use crate::seeds::{child_seed, rng_from};
use crate::stats::{mad_sd, mean, median, sample_sd};

/// Indices of a resample of `n` rows with replacement.
pub fn resample_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Applies `f` to `b` bootstrap resamples of `s`. Resample `k` is drawn from
/// a seed derived from `(seed, k)`; `f` receives the resample and a seed for
/// its own randomness. Results are in resample order.
pub fn bootstrap_map<T: Send>(
    s: &ObservedSample,
    b: usize,
    seed: u64,
    workers: usize,
    f: impl Fn(&ObservedSample, u64) -> T + Sync + Send,
) -> Result<Vec<T>> {
    with_workers(workers, || {
        (0..b)
            .into_par_iter()
            .map(|k| {
                let stream = child_seed(seed, k as u64);
                let rows = resample_indices(s.n(), child_seed(stream, 0));
                f(&s.subset(&rows), child_seed(stream, 1))
            })
            .collect()
    })
}

/// Errors when the failure fraction exceeds `budget`.
pub fn check_failure_budget(failed: usize, total: usize, budget: f64) -> Result<()> {
    if failed as f64 > budget * total as f64 || (total > 0 && failed == total) {
        Err(Error::FailureBudgetExceeded { failed, total })
    } else {
        Ok(())
    }
}

/// Robust and moment summaries of bootstrap estimates of one procedure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapSummary {
    pub full_estimate: f64,
    pub successes: usize,
    pub failures: usize,
    pub median: f64,
    /// `1.4826 * median |tau_b - median(tau)|`; absent for one resample.
    pub mad_sd: Option<f64>,
    pub median_se: f64,
    /// Share of resample intervals containing the full-data estimate.
    pub coverage: f64,
    pub mean: f64,
    pub sd: Option<f64>,
}

impl BootstrapSummary {
    pub fn new(full: &CausalEstimate, draws: &[CausalEstimate], failures: usize) -> Self {
        let taus: Vec<f64> = draws.iter().map(|e| e.tau).collect();
        let ses: Vec<f64> = draws.iter().map(|e| e.se_tau).collect();
        let several = taus.len() > 1;
        Self {
            full_estimate: full.tau,
            successes: taus.len(),
            failures,
            median: median(&taus),
            mad_sd: several.then(|| mad_sd(&taus)),
            median_se: median(&ses),
            coverage: draws.iter().filter(|e| e.covers(full.tau)).count() as f64 / taus.len() as f64,
            mean: mean(&taus),
            sd: sample_sd(&taus),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_in_range_and_seeded() {
        let a = resample_indices(50, 4);
        assert!(a.iter().all(|&i| i < 50));
        assert_eq!(a, resample_indices(50, 4));
        assert_ne!(a, resample_indices(50, 5));
    }

    #[test]
    fn budget() {
        assert!(check_failure_budget(2, 100, 0.02).is_ok());
        assert!(check_failure_budget(3, 100, 0.02).is_err());
        assert!(check_failure_budget(1, 1, 0.02).is_err());
    }
}
