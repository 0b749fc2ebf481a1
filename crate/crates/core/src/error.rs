use alloc::string::String;

use crate::model::Gains;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unknown plant kind `{0}`")]
    UnknownPlantKind(String),
    #[error("region empty")]
    RegionEmpty,
    #[error("unbounded region: {0}")]
    UnboundedRegion(&'static str),
    #[error("no positive-margin gains found; best point ({}, {}) with margin {margin}", best.kp, best.kd)]
    SynthesisFailed { best: Gains, margin: f64 },
    #[error("k̄₁ = kp − L1 must be positive, got {0}")]
    NonPositiveKbar1(f64),
    #[error("initial moment matrix is not symmetric (asymmetry {0})")]
    NotSymmetric(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("singular linear system")]
    Singular,
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("nonpositive trace in the fit window")]
    NonPositiveTrace,
    #[error("all {trials} trials blew up (earliest at t = {first_blowup_time})")]
    AllTrialsBlewUp { trials: usize, first_blowup_time: f64 },
}
