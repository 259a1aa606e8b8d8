use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use cgce::resample::check_failure_budget;
use cgce::{
    bootstrap_map, generate_dataset, procedure::with_workers, run_monte_carlo, seeds::child_seed, seeds::derive_seed,
    BootstrapSummary, CausalEstimate, Estimand, FoldScheme, McConfig, McMethod, ObservedSample, Procedure, Scenario,
    ScenarioSpec,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{parse_estimand, parse_split, AnalysisConfig, ConfigLayer, PropensitySource, Standardize};
use crate::data::{load_sample, write_sample, CsvTable};
use crate::error::{CliError, CliResult, ErrorKind};

/// Largest tolerated fraction of failed bootstrap resamples.
pub const BOOTSTRAP_FAILURE_BUDGET: f64 = 0.02;

#[derive(Debug, Parser)]
#[command(name = "cgce", version, about = "Complier causal effects under one-sided noncompliance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo study of a simulation design.
    Simulate(SimulateArgs),
    /// Estimate the complier effect from a CSV file.
    Estimate(EstimateArgs),
    /// Bootstrap the estimators on a CSV file.
    Bootstrap(BootstrapArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// mean or quantile.
    #[arg(long)]
    pub estimand: Option<String>,
    /// Quantile level (default 0.5).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Cross-fitting folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// random or sequential fold assignment.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Confidence level.
    #[arg(long)]
    pub level: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Machine-readable output; JSON if the name ends in .json, CSV otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV with columns x1..xd, z, t, y and optionally p.
    #[arg(long)]
    pub input: PathBuf,
    /// Constant propensity, or the name of a propensity column.
    #[arg(long)]
    pub propensity: Option<String>,
    /// kernel or mlp.
    #[arg(long)]
    pub learner: Option<String>,
    /// Apply asinh to the outcome.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub asinh: Option<bool>,
    /// true, false, or a comma-separated list of covariate columns.
    #[arg(long)]
    pub standardize: Option<String>,
    /// Comma-separated: simple, efficient.
    #[arg(long, default_value = "simple,efficient")]
    pub methods: String,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Number of resamples.
    #[arg(long = "reps")]
    pub reps: Option<usize>,
    /// Write every resample estimate to this CSV.
    #[arg(long)]
    pub dump_reps: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// 1 or 2.
    #[arg(long, default_value = "1")]
    pub scenario: String,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 300)]
    pub reps: usize,
    /// Comma-separated: simple, eff-kernel, eff-mlp, eff-oracle.
    #[arg(long, default_value = "simple,eff-kernel,eff-oracle")]
    pub methods: String,
    /// Write every replication estimate to this CSV.
    #[arg(long)]
    pub dump_reps: Option<PathBuf>,
    /// Write the first replication's dataset to this CSV instead of running
    /// the study.
    #[arg(long)]
    pub emit_data: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command, writing the
/// human-readable report to `stdout`.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = write!(stdout, "{}", e.render());
                return Ok(());
            }
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::new(ErrorKind::Usage, first.trim_start_matches("error: ")));
        }
    };
    match cli.command {
        Command::Simulate(a) => simulate(&a, stdout),
        Command::Estimate(a) => estimate(&a, stdout),
        Command::Bootstrap(a) => bootstrap(&a, stdout),
    }
}

/// Runs the command line and returns the process exit code. Failures are
/// reported as a single line on standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run_with(args, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

fn workers(requested: Option<usize>) -> CliResult<usize> {
    match requested {
        Some(0) => Err(CliError::config("workers must be at least 1")),
        Some(w) => Ok(w),
        None => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn wants_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::new(ErrorKind::Io, e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn emit(stdout: &mut dyn Write, text: &str) -> CliResult<()> {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::new(ErrorKind::Io, format!("stdout: {e}")))
}

fn config_layer(common: &ConfigArgs, data: Option<&DataArgs>, bootstrap_reps: Option<usize>) -> CliResult<ConfigLayer> {
    let file = match &common.config {
        Some(path) => ConfigLayer::load(path)?,
        None => ConfigLayer::default(),
    };
    let flags = ConfigLayer {
        estimand: common.estimand.clone(),
        alpha: common.alpha,
        propensity: data.and_then(|d| d.propensity.as_deref()).map(PropensitySource::parse),
        learner: data.and_then(|d| d.learner.clone()),
        folds: common.folds,
        split: common.split.clone(),
        seed: common.seed,
        level: common.level,
        asinh: data.and_then(|d| d.asinh),
        standardize: data.and_then(|d| d.standardize.as_deref()).map(Standardize::parse),
        bootstrap_reps,
    };
    Ok(file.overlay(flags))
}

/// An estimator requested on the command line.
#[derive(Debug, Clone)]
struct Choice {
    label: String,
    procedure: Procedure,
}

fn parse_choices(list: &str, cfg: &AnalysisConfig) -> CliResult<Vec<Choice>> {
    let mut out: Vec<Choice> = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let procedure = match name.to_ascii_lowercase().as_str() {
            "simple" => Procedure::Simple,
            "efficient" | "eff" => cfg.learner.procedure(),
            other => return Err(CliError::config(format!("unknown method '{other}' (simple, efficient)"))),
        };
        let label = procedure.label();
        if !out.iter().any(|c| c.label == label) {
            out.push(Choice { label, procedure });
        }
    }
    if out.is_empty() {
        return Err(CliError::config("no methods requested"));
    }
    Ok(out)
}

fn load(data: &DataArgs, cfg: &AnalysisConfig) -> CliResult<ObservedSample> {
    let table = CsvTable::read(&data.input)?;
    load_sample(&table, cfg).map_err(|e| e.context(data.input.display()))
}

fn run_choice(c: &Choice, s: &ObservedSample, cfg: &AnalysisConfig, seed: u64) -> CliResult<CausalEstimate> {
    c.procedure
        .run(s, &cfg.estimand, &cfg.scheme, cfg.level, seed)
        .map_err(|e| CliError::from(e).context(format!("{} on {} rows", c.label, s.n())))
}

fn estimand_label(e: &Estimand) -> String {
    match e {
        Estimand::Mean => "mean".into(),
        Estimand::Quantile { alpha } => format!("quantile({alpha})"),
    }
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, Serialize)]
pub struct LabeledEstimate {
    pub label: String,
    pub estimate: CausalEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub n: usize,
    pub config: AnalysisConfig,
    pub estimates: Vec<LabeledEstimate>,
}

impl EstimateReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,tau,se,ci_lower,ci_upper,level,tau1,tau0,n\n");
        for r in &self.estimates {
            let e = &r.estimate;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.label, e.tau, e.se_tau, e.ci_lower, e.ci_upper, e.level, e.tau1, e.tau0, e.n_used
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "n = {}, estimand = {}, level = {}",
            self.n,
            estimand_label(&self.config.estimand),
            self.config.level
        );
        let _ = writeln!(
            out,
            "{:<12} {:>12} {:>10} {:>12} {:>12}",
            "method", "tau", "se", "ci_lower", "ci_upper"
        );
        for r in &self.estimates {
            let e = &r.estimate;
            let _ = writeln!(
                out,
                "{:<12} {:>12.6} {:>10.6} {:>12.6} {:>12.6}",
                r.label, e.tau, e.se_tau, e.ci_lower, e.ci_upper
            );
            for w in &e.diagnostics.warnings {
                let _ = writeln!(out, "  warning: {w}");
            }
        }
        out
    }
}

pub fn estimate(a: &EstimateArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = AnalysisConfig::resolve(config_layer(&a.common, Some(&a.data), None)?)?;
    let choices = parse_choices(&a.data.methods, &cfg)?;
    let s = load(&a.data, &cfg)?;
    let w = workers(a.common.workers)?;
    let estimates = with_workers(w, || {
        choices
            .iter()
            .map(|c| {
                Ok(LabeledEstimate {
                    label: c.label.clone(),
                    estimate: run_choice(c, &s, &cfg, cfg.seed)?,
                })
            })
            .collect::<CliResult<Vec<_>>>()
    })??;
    let report = EstimateReport { n: s.n(), config: cfg, estimates };
    if let Some(path) = &a.common.out {
        let text = if wants_json(path) { to_json(&report)? } else { report.to_csv() };
        write_file(path, &text)?;
    }
    emit(stdout, &report.to_table())
}

// --------------------------------------------------------------- bootstrap

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapRow {
    pub label: String,
    #[serde(flatten)]
    pub summary: BootstrapSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapDraw {
    pub resample: usize,
    pub label: String,
    pub tau: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapReport {
    pub n: usize,
    pub reps: usize,
    pub config: AnalysisConfig,
    pub rows: Vec<BootstrapRow>,
    #[serde(skip)]
    pub draws: Vec<BootstrapDraw>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl BootstrapReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,estimate,median,mad_sd,median_se,mean,sd,coverage,successes,failures\n");
        for r in &self.rows {
            let s = &r.summary;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.label,
                s.full_estimate,
                s.median,
                opt(s.mad_sd),
                s.median_se,
                s.mean,
                opt(s.sd),
                s.coverage,
                s.successes,
                s.failures
            );
        }
        out
    }

    pub fn draws_csv(&self) -> String {
        let mut out = String::from("resample,method,tau,se\n");
        for d in &self.draws {
            let _ = writeln!(out, "{},{},{},{}", d.resample, d.label, d.tau, d.se);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "n = {}, B = {}, estimand = {}",
            self.n,
            self.reps,
            estimand_label(&self.config.estimand)
        );
        let _ = writeln!(
            out,
            "{:<12} {:>11} {:>11} {:>9} {:>10} {:>9}",
            "method", "estimate", "median", "mad_sd", "median_se", "coverage"
        );
        for r in &self.rows {
            let s = &r.summary;
            let mad = s.mad_sd.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<12} {:>11.4} {:>11.4} {:>9} {:>10.4} {:>9.3}",
                r.label, s.full_estimate, s.median, mad, s.median_se, s.coverage
            );
            if s.failures > 0 {
                let _ = writeln!(out, "  {} failed resample(s)", s.failures);
            }
        }
        out
    }
}

/// Runs each estimator on the full sample and on `reps` resamples.
pub fn bootstrap_report(s: &ObservedSample, cfg: &AnalysisConfig, methods: &str, workers: usize) -> CliResult<BootstrapReport> {
    let reps = cfg.bootstrap_reps;
    if reps == 0 {
        return Err(CliError::config("bootstrap needs at least one resample"));
    }
    let choices = parse_choices(methods, cfg)?;
    let full = with_workers(workers, || {
        choices
            .iter()
            .map(|c| run_choice(c, s, cfg, cfg.seed))
            .collect::<CliResult<Vec<_>>>()
    })??;
    let draws = bootstrap_map(s, reps, derive_seed(cfg.seed, &[0xb007]), workers, |rs, seed| {
        choices
            .iter()
            .map(|c| c.procedure.run(rs, &cfg.estimand, &cfg.scheme, cfg.level, seed))
            .collect::<Vec<_>>()
    })?;

    let mut rows = Vec::with_capacity(choices.len());
    let mut dump = Vec::new();
    for (k, c) in choices.iter().enumerate() {
        let mut ok = Vec::with_capacity(reps);
        for (b, per) in draws.iter().enumerate() {
            if let Ok(e) = &per[k] {
                dump.push(BootstrapDraw {
                    resample: b,
                    label: c.label.clone(),
                    tau: e.tau,
                    se: e.se_tau,
                });
                ok.push(e.clone());
            }
        }
        let failed = reps - ok.len();
        check_failure_budget(failed, reps, BOOTSTRAP_FAILURE_BUDGET)
            .map_err(|e| CliError::from(e).context(&c.label))?;
        rows.push(BootstrapRow {
            label: c.label.clone(),
            summary: BootstrapSummary::new(&full[k], &ok, failed),
        });
    }
    dump.sort_by_key(|d| d.resample);
    Ok(BootstrapReport {
        n: s.n(),
        reps,
        config: cfg.clone(),
        rows,
        draws: dump,
    })
}

pub fn bootstrap(a: &BootstrapArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = AnalysisConfig::resolve(config_layer(&a.common, Some(&a.data), a.reps)?)?;
    let s = load(&a.data, &cfg)?;
    let report = bootstrap_report(&s, &cfg, &a.data.methods, workers(a.common.workers)?)?;
    if let Some(path) = &a.common.out {
        let text = if wants_json(path) { to_json(&report)? } else { report.to_csv() };
        write_file(path, &text)?;
    }
    if let Some(path) = &a.dump_reps {
        write_file(path, &report.draws_csv())?;
    }
    emit(stdout, &report.to_table())
}

// ---------------------------------------------------------------- simulate

fn parse_scenario(s: &str) -> CliResult<Scenario> {
    match s.trim() {
        "1" | "one" => Ok(Scenario::One),
        "2" | "two" => Ok(Scenario::Two),
        other => Err(CliError::config(format!("unknown scenario '{other}' (1, 2)"))),
    }
}

pub fn simulate(a: &SimulateArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let layer = config_layer(&a.common, None, None)?;
    for (key, set) in [
        ("propensity", layer.propensity.is_some()),
        ("learner", layer.learner.is_some()),
        ("asinh", layer.asinh.is_some()),
        ("standardize", layer.standardize.is_some()),
        ("bootstrap_reps", layer.bootstrap_reps.is_some()),
    ] {
        if set {
            return Err(CliError::config(format!("key '{key}' does not apply to simulate")));
        }
    }
    let spec = ScenarioSpec::new(parse_scenario(&a.scenario)?, a.d, a.n)?;
    let seed = layer.seed.unwrap_or(0);

    if let Some(path) = &a.emit_data {
        let data = generate_dataset(&spec, derive_seed(child_seed(seed, 0), &[0]))?;
        let mut buf = Vec::new();
        write_sample(&data.sample, &mut buf)?;
        std::fs::write(path, buf).map_err(|e| CliError::io(path, e))?;
        return emit(stdout, &format!("wrote {} rows to {}\n", spec.n, path.display()));
    }

    let methods = a
        .methods
        .split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(McMethod::parse)
        .collect::<cgce::Result<Vec<_>>>()?;
    let level = layer.level.unwrap_or(0.95);
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::config(format!("level {level} not in (0, 1)")));
    }
    let folds = layer.folds.unwrap_or(2);
    let random = match &layer.split {
        Some(s) => parse_split(s)?,
        None => true,
    };
    let cfg = McConfig {
        estimand: parse_estimand(layer.estimand.as_deref(), layer.alpha)?,
        level,
        scheme: FoldScheme { folds, random },
        ..McConfig::default()
    };
    let report = run_monte_carlo(&spec, &methods, a.reps, seed, workers(a.common.workers)?, &cfg)?;
    if let Some(path) = &a.common.out {
        let text = if wants_json(path) { to_json(&report)? } else { report.to_csv() };
        write_file(path, &text)?;
    }
    if let Some(path) = &a.dump_reps {
        write_file(path, &report.reps_csv())?;
    }
    emit(stdout, &report.to_table())
}
