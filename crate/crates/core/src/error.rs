use thiserror::Error;

use crate::nuisance::Nuisance;

/// Errors raised while validating data or computing an estimate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("column lengths differ: {0}")]
    LengthMismatch(String),

    #[error("sample is empty")]
    EmptySample,

    #[error("row {row}: {column} must be 0 or 1, found {value}")]
    NonBinaryAssignment {
        row: usize,
        column: &'static str,
        value: f64,
    },

    #[error("row {row}: treatment received without assignment (t = 1, z = 0)")]
    OneSidedViolation { row: usize },

    #[error("row {row}: propensity {value} outside [{clip}, 1 - {clip}]")]
    PropensityOutOfBounds { row: usize, value: f64, clip: f64 },

    #[error("row {row}: non-finite value in {column}")]
    NonFinite { row: usize, column: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no compliers observed (sum of t is zero)")]
    NoCompliersObserved,

    #[error("control-arm weights are degenerate (|sum| < 1e-12)")]
    DegenerateWeights,

    #[error("estimating equation has a singular denominator")]
    SingularDenominator,

    #[error("estimating equation never changes sign")]
    NoCrossing,

    #[error("derivative of the estimating equation is singular")]
    SingularDerivative,

    #[error("one of the assignment arms is empty")]
    EmptyArm,

    #[error("covariate column {0} has zero variance")]
    ZeroVarianceCovariate(usize),

    #[error("nuisance subgroup {0} is empty")]
    EmptySubgroup(Nuisance),

    #[error("nuisance subgroup {which} has {size} rows, need at least {min}")]
    SubgroupTooSmall {
        which: Nuisance,
        size: usize,
        min: usize,
    },

    #[error("network training diverged (non-finite loss)")]
    TrainingDiverged,

    #[error("quadrature failed to converge: {0}")]
    QuadratureFailure(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} replications failed, above the failure budget")]
    FailureBudgetExceeded { failed: usize, total: usize },
}

impl Error {
    pub(crate) fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }

    /// The innermost error, unwrapping fold annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Fold { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
