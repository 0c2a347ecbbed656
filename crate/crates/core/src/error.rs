use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("sample is empty")]
    EmptySample,

    #[error("covariate table has no columns")]
    NoCovariates,

    #[error("row {row} has {found} covariates, expected {expected}")]
    RaggedCovariates { row: usize, expected: usize, found: usize },

    #[error("covariate at row {row}, column {column} is not finite")]
    NonFiniteCovariate { row: usize, column: usize },

    #[error("{rows} covariate rows but {labels} treatment labels")]
    LengthMismatch { rows: usize, labels: usize },

    #[error("unknown treatment label `{0}`")]
    UnknownLabel(String),

    #[error("unit index {index} out of bounds for sample of {n} units")]
    IndexOutOfBounds { index: usize, n: usize },

    #[error("metric is invalid: {0}")]
    InvalidMetric(String),

    #[error("constraints list {found} treatment conditions, sample has {expected}")]
    ConstraintArity { expected: usize, found: usize },

    #[error("infeasible constraints: {0}")]
    InfeasibleConstraints(String),

    #[error("requested {requested} neighbors but only {available} candidates exist")]
    InfeasibleNeighbors { requested: usize, available: usize },

    #[error("search set is empty")]
    EmptySearchSet,

    #[error("caliper must be a strictly positive finite number")]
    InvalidCaliper,

    #[error("no unit can satisfy the constraints within the caliper; infeasible units: {units:?}")]
    NoFeasibleUnits { units: Vec<usize> },

    #[error("operation requires exactly two treatment conditions, sample has {0}")]
    RequiresTwoConditions(usize),

    #[error("matched group {group} has no {missing} units")]
    GroupMissingCondition { group: usize, missing: &'static str },

    #[error("matching has no groups")]
    EmptyMatching,

    #[error("no treated unit is assigned to a group")]
    NoTreatedAssigned,

    #[error("matching covers {found} units, sample has {expected}")]
    MatchingSize { expected: usize, found: usize },

    #[error("brute-force search is capped at {cap} units, sample has {n}")]
    OracleTooLarge { n: usize, cap: usize },

    #[error("no admissible partition exists for the constraints")]
    NoAdmissiblePartition,

    #[error("{0} outcomes supplied for {1} units")]
    OutcomeLength(usize, usize),

    #[error("outcome for unit {0} is not finite")]
    NonFiniteOutcome(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
