//! Analysis configuration from a JSON file and command-line flags.

use std::path::Path;

use cgce::{Estimand, FoldScheme, KernelLearner, MlpConfig, MlpLearner, Procedure, DEFAULT_PROPENSITY_CLIP};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Where the known propensity comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PropensitySource {
    Constant(f64),
    Column(String),
}

impl PropensitySource {
    /// A number is a constant, anything else a column name.
    pub fn parse(s: &str) -> Self {
        match s.trim().parse::<f64>() {
            Ok(v) => PropensitySource::Constant(v),
            Err(_) => PropensitySource::Column(s.trim().to_string()),
        }
    }
}

/// Covariates to center and scale: all of them, or named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Standardize {
    All(bool),
    Columns(Vec<String>),
}

impl Default for Standardize {
    fn default() -> Self {
        Standardize::All(false)
    }
}

impl Standardize {
    /// `true`/`false`, or a comma-separated list of column names.
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "all" => Standardize::All(true),
            "false" | "no" | "0" | "none" => Standardize::All(false),
            _ => Standardize::Columns(s.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect()),
        }
    }
}

/// Every key is optional; unset keys fall back to defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub estimand: Option<String>,
    pub alpha: Option<f64>,
    pub propensity: Option<PropensitySource>,
    pub learner: Option<String>,
    pub folds: Option<usize>,
    pub split: Option<String>,
    pub seed: Option<u64>,
    pub level: Option<f64>,
    pub asinh: Option<bool>,
    pub standardize: Option<Standardize>,
    pub bootstrap_reps: Option<usize>,
}

impl ConfigLayer {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(path.display()))
    }

    /// Keys set in `top` replace those in `self`.
    pub fn overlay(self, top: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            estimand: top.estimand.or(self.estimand),
            alpha: top.alpha.or(self.alpha),
            propensity: top.propensity.or(self.propensity),
            learner: top.learner.or(self.learner),
            folds: top.folds.or(self.folds),
            split: top.split.or(self.split),
            seed: top.seed.or(self.seed),
            level: top.level.or(self.level),
            asinh: top.asinh.or(self.asinh),
            standardize: top.standardize.or(self.standardize),
            bootstrap_reps: top.bootstrap_reps.or(self.bootstrap_reps),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Kernel,
    Mlp,
}

impl LearnerKind {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kernel" => Ok(LearnerKind::Kernel),
            "mlp" | "nn" => Ok(LearnerKind::Mlp),
            "oracle" => Err(CliError::config(
                "learner 'oracle' needs the true nuisance functions and is only available in simulate",
            )),
            other => Err(CliError::config(format!("unknown learner '{other}' (kernel, mlp)"))),
        }
    }

    pub fn procedure(self) -> Procedure {
        match self {
            LearnerKind::Kernel => Procedure::efficient(KernelLearner::default()),
            LearnerKind::Mlp => Procedure::efficient(MlpLearner {
                config: MlpConfig::default(),
            }),
        }
    }
}

pub const DEFAULT_BOOTSTRAP_REPS: usize = 1000;

/// A resolved, validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub estimand: Estimand,
    /// `None` reads per-row values from a `p` column.
    pub propensity: Option<PropensitySource>,
    pub learner: LearnerKind,
    pub scheme: FoldScheme,
    pub seed: u64,
    pub level: f64,
    pub asinh: bool,
    pub standardize: Standardize,
    pub bootstrap_reps: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            estimand: Estimand::Mean,
            propensity: None,
            learner: LearnerKind::Kernel,
            scheme: FoldScheme::default(),
            seed: 0,
            level: 0.95,
            asinh: false,
            standardize: Standardize::default(),
            bootstrap_reps: DEFAULT_BOOTSTRAP_REPS,
        }
    }
}

pub fn parse_estimand(name: Option<&str>, alpha: Option<f64>) -> CliResult<Estimand> {
    match name.map(|s| s.trim().to_ascii_lowercase()).as_deref() {
        None | Some("mean") => Ok(Estimand::Mean),
        Some("quantile") => Estimand::quantile(alpha.unwrap_or(0.5)).map_err(CliError::from),
        Some(other) => Err(CliError::config(format!("unknown estimand '{other}' (mean, quantile)"))),
    }
}

pub fn parse_split(s: &str) -> CliResult<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "random" | "permutation" => Ok(true),
        "sequential" => Ok(false),
        other => Err(CliError::config(format!("unknown split '{other}' (random, sequential)"))),
    }
}

impl AnalysisConfig {
    pub fn resolve(layer: ConfigLayer) -> CliResult<Self> {
        let base = AnalysisConfig::default();
        let estimand = parse_estimand(layer.estimand.as_deref(), layer.alpha)?;
        if let Some(PropensitySource::Constant(p)) = layer.propensity {
            if !(DEFAULT_PROPENSITY_CLIP..=1.0 - DEFAULT_PROPENSITY_CLIP).contains(&p) {
                return Err(CliError::config(format!(
                    "constant propensity {p} outside [{DEFAULT_PROPENSITY_CLIP}, {}]",
                    1.0 - DEFAULT_PROPENSITY_CLIP
                )));
            }
        }
        let learner = match &layer.learner {
            Some(l) => LearnerKind::parse(l)?,
            None => base.learner,
        };
        let folds = layer.folds.unwrap_or(base.scheme.folds);
        if folds < 2 {
            return Err(CliError::config(format!("folds must be at least 2, got {folds}")));
        }
        let random = match &layer.split {
            Some(s) => parse_split(s)?,
            None => base.scheme.random,
        };
        let level = layer.level.unwrap_or(base.level);
        if !(level > 0.0 && level < 1.0) {
            return Err(CliError::config(format!("level {level} not in (0, 1)")));
        }
        Ok(AnalysisConfig {
            estimand,
            propensity: layer.propensity,
            learner,
            scheme: FoldScheme { folds, random },
            seed: layer.seed.unwrap_or(base.seed),
            level,
            asinh: layer.asinh.unwrap_or(base.asinh),
            standardize: layer.standardize.unwrap_or_default(),
            bootstrap_reps: layer.bootstrap_reps.unwrap_or(base.bootstrap_reps),
        })
    }
}
