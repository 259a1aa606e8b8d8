//! Named estimation procedures, so that harnesses can run several
//! estimators on the same data uniformly.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::efficient::{efficient_estimate, CrossFitPlan, SplitMode};
use crate::error::{Error, Result};
use crate::model::{CausalEstimate, Estimand, ObservedSample};
use crate::nuisance::Learner;
use crate::seeds::derive_seed;
use crate::simple::simple_estimate;

const SPLIT_STREAM: u64 = 0x5117;

/// How the cross-fitting partition is built for each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FoldScheme {
    pub folds: usize,
    /// Random permutation (seeded per run) or consecutive blocks.
    pub random: bool,
}

impl Default for FoldScheme {
    fn default() -> Self {
        Self {
            folds: 2,
            random: true,
        }
    }
}

impl FoldScheme {
    pub fn plan(&self, n: usize, seed: u64) -> Result<CrossFitPlan> {
        let mode = if self.random {
            SplitMode::RandomPermutation(derive_seed(seed, &[SPLIT_STREAM]))
        } else {
            SplitMode::Sequential
        };
        CrossFitPlan::new(n, self.folds, mode)
    }
}

/// The simple estimator, or the efficient one with a given learner.
#[derive(Clone)]
pub enum Procedure {
    Simple,
    Efficient(Arc<dyn Learner>),
}

impl Procedure {
    pub fn efficient(learner: impl Learner + 'static) -> Self {
        Procedure::Efficient(Arc::new(learner))
    }

    pub fn label(&self) -> String {
        match self {
            Procedure::Simple => "simple".into(),
            Procedure::Efficient(l) => l.label(),
        }
    }

    /// Runs the procedure. `seed` drives the fold partition and any
    /// randomness inside the learner.
    pub fn run(
        &self,
        s: &ObservedSample,
        spec: &Estimand,
        scheme: &FoldScheme,
        level: f64,
        seed: u64,
    ) -> Result<CausalEstimate> {
        match self {
            Procedure::Simple => simple_estimate(s, spec, level),
            Procedure::Efficient(learner) => {
                let plan = scheme.plan(s.n(), seed)?;
                efficient_estimate(s, spec, learner.as_ref(), &plan, level, derive_seed(seed, &[1]))
            }
        }
    }
}

impl fmt::Debug for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Procedure({})", self.label())
    }
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
