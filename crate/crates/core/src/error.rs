use serde::Serialize;
use thiserror::Error;

use crate::spectral::Regime;

/// One violated network invariant. Indices are 0-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum Violation {
    NotSquare { rows: usize, cols: usize },
    BlockSizesMismatch { sum: usize, n_agents: usize },
    EmptyBlock { block: usize },
    NonFinite { h: usize, j: usize },
    NegativeWeight { h: usize, j: usize },
    NonNormalizedColumn { j: usize },
    LowerBlockNonZero { h: usize, j: usize },
    LeadingBlockReducible,
    DownstreamNormTooLarge { block: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NotSquare { rows, cols } => write!(f, "weights are {rows}x{cols}, not square"),
            Violation::BlockSizesMismatch { sum, n_agents } => {
                write!(f, "block sizes sum to {sum} but there are {n_agents} agents")
            }
            Violation::EmptyBlock { block } => write!(f, "block {block} is empty"),
            Violation::NonFinite { h, j } => write!(f, "weight ({h},{j}) is not finite"),
            Violation::NegativeWeight { h, j } => write!(f, "weight ({h},{j}) is negative"),
            Violation::NonNormalizedColumn { j } => write!(f, "column {j} does not sum to 1"),
            Violation::LowerBlockNonZero { h, j } => {
                write!(f, "weight ({h},{j}) lies below the block diagonal and is nonzero")
            }
            Violation::LeadingBlockReducible => write!(f, "leading block is not irreducible"),
            Violation::DownstreamNormTooLarge { block } => {
                write!(f, "diagonal block {block} has max column sum >= 1")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {}", join(.0))]
    InvalidNetwork(Vec<Violation>),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("P Q is not the identity (residual {residual:e})")]
    IdentityViolation { residual: f64 },
    #[error("P W Q is not in Jordan form (residual {residual:e})")]
    JordanViolation { residual: f64 },
    #[error("dominant left eigenvector is not a multiple of the all-ones vector")]
    NormalizationImpossible,
    #[error("no independent eigenbasis: {0}")]
    DeficientEigenbasis(String),
    #[error("non-dominant eigenvalue {index} has real part >= 1")]
    DominantNotSimple { index: usize },
    #[error("agents must differ (got {0} twice)")]
    SameAgent(usize),
    #[error("regime {0:?} has no covariance theory")]
    UnsupportedRegime(Regime),
    #[error("operation needs regime {expected:?}, found {found:?}")]
    RegimeMismatch { expected: Regime, found: Regime },
    #[error("zero denominator at k={k}, m={m}")]
    ZeroDenominator { k: usize, m: usize },
    #[error("action probability {p} of agent {j} is outside [0,1]")]
    ProbabilityOutOfRange { j: usize, p: f64 },
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("every run was degenerate")]
    AllDegenerate,
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("covariance check failed: {0}")]
    Covariance(String),
    #[error("parse error: {0}")]
    Parse(String),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl Error {
    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidNetwork(_) => "InvalidNetwork",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::IdentityViolation { .. } => "IdentityViolation",
            Error::JordanViolation { .. } => "JordanViolation",
            Error::NormalizationImpossible => "NormalizationImpossible",
            Error::DeficientEigenbasis(_) => "DeficientEigenbasis",
            Error::DominantNotSimple { .. } => "DominantNotSimple",
            Error::SameAgent(_) => "SameAgent",
            Error::UnsupportedRegime(_) => "UnsupportedRegime",
            Error::RegimeMismatch { .. } => "RegimeMismatch",
            Error::ZeroDenominator { .. } => "ZeroDenominator",
            Error::ProbabilityOutOfRange { .. } => "ProbabilityOutOfRange",
            Error::ZeroHorizon => "ZeroHorizon",
            Error::AllDegenerate => "AllDegenerate",
            Error::EmptyGrid => "EmptyGrid",
            Error::Covariance(_) => "Covariance",
            Error::Parse(_) => "Parse",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
