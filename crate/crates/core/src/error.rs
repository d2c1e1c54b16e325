use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("the {arm} arm is empty")]
    EmptyArm { arm: &'static str },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("{what} has length {found}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("covariate dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("target weights sum to {sum}, expected 1")]
    WeightsSum { sum: f64 },

    #[error("target weights must be non-negative (index {index})")]
    NegativeWeight { index: usize },

    #[error("target weights are not constant within each arm")]
    NotArmLevel,

    #[error("invalid norm: {0}")]
    InvalidNorm(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("multiplier direction system is inconsistent (residual {residual:e})")]
    InconsistentSystem { residual: f64 },

    #[error("path exceeded the knot cap of {cap}")]
    MaxKnotsExceeded { cap: usize },

    #[error("KKT check failed at mu = {mu}: {detail}")]
    KktViolation { mu: f64, detail: String },

    #[error("solver stalled: {detail} (gap {gap:e})")]
    SolverStall { detail: String, gap: f64 },

    #[error("estimator normalizer is zero at mu = 0")]
    DegenerateNormalizer,

    #[error("criterion minimum could not be bracketed")]
    NotBracketed,

    #[error("requested {requested} matches but the opposite arm has only {available} units")]
    TooFewOpposite { requested: usize, available: usize },

    #[error("weights do not satisfy the normalization (treated sum {treated_sum}, control sum {control_sum}); worst-case bias is infinite")]
    UnboundedBias { treated_sum: f64, control_sum: f64 },

    #[error("{arm} arm has {size} units, need at least {needed}")]
    ArmTooSmall {
        arm: &'static str,
        size: usize,
        needed: usize,
    },

    #[error("empty smoothing window for unit {index}")]
    EmptyWindow { index: usize },

    #[error("outcomes are required for this operation")]
    MissingOutcomes,
}
