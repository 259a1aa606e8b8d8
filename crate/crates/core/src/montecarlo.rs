//! Seeded Monte Carlo studies over the simulation designs.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CausalEstimate, Estimand};
use crate::nuisance::{KernelLearner, MlpConfig, MlpLearner};
use crate::procedure::{with_workers, FoldScheme, Procedure};
use crate::seeds::{child_seed, derive_seed};
use crate::simulation::{generate_dataset, oracle_learner, true_effect, ScenarioSpec};
use crate::stats::{mean, sample_sd};

/// Estimators a study can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum McMethod {
    Simple,
    EffKernel,
    EffMlp,
    EffOracle,
}

impl McMethod {
    pub const ALL: [McMethod; 4] = [McMethod::Simple, McMethod::EffKernel, McMethod::EffMlp, McMethod::EffOracle];

    pub fn label(self) -> &'static str {
        match self {
            McMethod::Simple => "simple",
            McMethod::EffKernel => "eff-kernel",
            McMethod::EffMlp => "eff-mlp",
            McMethod::EffOracle => "eff-oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|m| m.label() == s || (s == "eff-nn" && *m == McMethod::EffMlp))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }

    fn procedure(self, spec: &ScenarioSpec, estimand: &Estimand, mlp: &MlpConfig) -> Procedure {
        match self {
            McMethod::Simple => Procedure::Simple,
            McMethod::EffKernel => Procedure::efficient(KernelLearner::default()),
            McMethod::EffMlp => Procedure::efficient(MlpLearner { config: mlp.clone() }),
            McMethod::EffOracle => Procedure::efficient(oracle_learner(spec, estimand)),
        }
    }
}

impl std::fmt::Display for McMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McConfig {
    pub estimand: Estimand,
    pub level: f64,
    pub scheme: FoldScheme,
    pub mlp: MlpConfig,
    /// Largest tolerated fraction of failed replications per method.
    pub failure_budget: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            estimand: Estimand::Mean,
            level: 0.95,
            scheme: FoldScheme::default(),
            mlp: MlpConfig::default(),
            failure_budget: 0.01,
        }
    }
}

/// Summary of one method across replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub method: McMethod,
    pub successes: usize,
    pub failures: usize,
    pub mean: f64,
    pub bias: f64,
    /// Across-replication standard deviation; absent for a single replication.
    pub sd: Option<f64>,
    pub rmse: f64,
    /// Mean of the estimated standard errors.
    pub sd_hat: f64,
    pub coverage: f64,
}

/// One estimate from one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub method: McMethod,
    pub tau: f64,
    pub se: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepFailure {
    pub rep: usize,
    pub method: McMethod,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub spec: ScenarioSpec,
    pub estimand: Estimand,
    pub truth: f64,
    pub replications: usize,
    pub base_seed: u64,
    pub rows: Vec<McRow>,
    pub reps: Vec<RepRecord>,
    pub failures: Vec<RepFailure>,
    #[serde(skip)]
    pub runtime: Duration,
}

fn summarize(method: McMethod, truth: f64, estimates: &[&CausalEstimate], failures: usize) -> McRow {
    let taus: Vec<f64> = estimates.iter().map(|e| e.tau).collect();
    let m = mean(&taus);
    let mse = taus.iter().map(|t| (t - truth) * (t - truth)).sum::<f64>() / taus.len() as f64;
    McRow {
        method,
        successes: taus.len(),
        failures,
        mean: m,
        bias: m - truth,
        sd: sample_sd(&taus),
        rmse: mse.sqrt(),
        sd_hat: mean(&estimates.iter().map(|e| e.se_tau).collect::<Vec<_>>()),
        coverage: estimates.iter().filter(|e| e.covers(truth)).count() as f64 / taus.len() as f64,
    }
}

/// Runs `replications` independent studies of `spec`.
///
/// Replication `r` uses data and estimator seeds derived from
/// `(base_seed, r)` only, and results are gathered in replication order, so
/// the report does not depend on `workers`. Failed replications are
/// recorded; if more than `failure_budget` of them fail for any method the
/// study is aborted.
pub fn run_monte_carlo(
    spec: &ScenarioSpec,
    methods: &[McMethod],
    replications: usize,
    base_seed: u64,
    workers: usize,
    cfg: &McConfig,
) -> Result<McReport> {
    spec.validate()?;
    if replications == 0 {
        return Err(Error::InvalidConfig("need at least one replication".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    let started = Instant::now();
    let truth = true_effect(spec, &cfg.estimand)?;
    let procedures: Vec<Procedure> = methods
        .iter()
        .map(|m| m.procedure(spec, &cfg.estimand, &cfg.mlp))
        .collect();

    let results: Vec<Vec<Result<CausalEstimate>>> = with_workers(workers, || {
        (0..replications)
            .into_par_iter()
            .map(|rep| {
                let seed = child_seed(base_seed, rep as u64);
                let data = match generate_dataset(spec, derive_seed(seed, &[0])) {
                    Ok(d) => d,
                    Err(e) => return vec![Err(e); procedures.len()],
                };
                procedures
                    .iter()
                    .map(|p| p.run(&data.sample, &cfg.estimand, &cfg.scheme, cfg.level, derive_seed(seed, &[1])))
                    .collect()
            })
            .collect()
    })?;

    let mut rows = Vec::with_capacity(methods.len());
    let mut reps = Vec::new();
    let mut failures = Vec::new();
    for (k, &method) in methods.iter().enumerate() {
        let mut ok = Vec::with_capacity(replications);
        let mut failed = 0;
        for (rep, per_method) in results.iter().enumerate() {
            match &per_method[k] {
                Ok(est) => {
                    reps.push(RepRecord {
                        rep,
                        method,
                        tau: est.tau,
                        se: est.se_tau,
                        covered: est.covers(truth),
                    });
                    ok.push(est);
                }
                Err(e) => {
                    failed += 1;
                    failures.push(RepFailure {
                        rep,
                        method,
                        error: e.to_string(),
                    });
                }
            }
        }
        if failed as f64 > cfg.failure_budget * replications as f64 || ok.is_empty() {
            return Err(Error::FailureBudgetExceeded {
                failed,
                total: replications,
            });
        }
        rows.push(summarize(method, truth, &ok, failed));
    }
    reps.sort_by_key(|r| (r.rep, methods.iter().position(|m| *m == r.method)));

    Ok(McReport {
        spec: *spec,
        estimand: cfg.estimand,
        truth,
        replications,
        base_seed,
        rows,
        reps,
        failures,
        runtime: started.elapsed(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl McReport {
    pub fn row(&self, method: McMethod) -> Option<&McRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Columns `method,mean,bias,sd,rmse,sd_hat,coverage`; `sd` is left
    /// empty for a single replication.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mean,bias,sd,rmse,sd_hat,coverage\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.method,
                r.mean,
                r.bias,
                opt(r.sd),
                r.rmse,
                r.sd_hat,
                r.coverage
            );
        }
        out
    }

    /// Per-replication estimates: `rep,method,tau,se,covered`.
    pub fn reps_csv(&self) -> String {
        let mut out = String::from("rep,method,tau,se,covered\n");
        for r in &self.reps {
            let _ = writeln!(out, "{},{},{},{},{}", r.rep, r.method, r.tau, r.se, u8::from(r.covered));
        }
        out
    }

    /// Aligned table for humans. The last line reports runtime.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario {}, d = {}, n = {}, R = {}, truth = {:.4}",
            self.spec.scenario, self.spec.d, self.spec.n, self.replications, self.truth
        );
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>9} {:>8} {:>8} {:>8} {:>9}",
            "method", "mean", "bias", "sd", "rmse", "sd_hat", "coverage"
        );
        for r in &self.rows {
            let sd = r.sd.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<12} {:>10.4} {:>9.4} {:>8} {:>8.3} {:>8.3} {:>9.3}",
                r.method.label(),
                r.mean,
                r.bias,
                sd,
                r.rmse,
                r.sd_hat,
                r.coverage
            );
        }
        if !self.failures.is_empty() {
            let _ = writeln!(out, "{} failed replication(s)", self.failures.len());
        }
        let _ = writeln!(out, "runtime {:.1}s", self.runtime.as_secs_f64());
        out
    }
}
