use std::fmt;

use crate::model::{Assortment, Violation};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Identifies one of the linear systems solved during recovery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SystemId {
    /// The transition-row system for a product.
    Rho(usize),
    /// The initial-distribution system.
    Lambda,
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemId::Rho(i) => write!(f, "{i}"),
            SystemId::Lambda => f.write_str("lambda"),
        }
    }
}

/// A single failed `(S, i)` conditional lookup, collected when building a
/// whole conditional table.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalFailure {
    pub assortment: Assortment,
    pub origin: usize,
    pub error: Error,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model: {0:?}")]
    InvalidModel(Vec<Violation>),

    #[error("absorption system for assortment {assortment} is singular")]
    SingularSystem { assortment: Assortment },

    #[error("choice probabilities for assortment {assortment} are missing")]
    MissingAssortment { assortment: Assortment },

    #[error(
        "denominator pi({product}, {assortment}) = {value:e} is at or below tolerance {tolerance:e}"
    )]
    ZeroDenominator {
        assortment: Assortment,
        product: usize,
        value: f64,
        tolerance: f64,
    },

    #[error("conditional probability pi({outcome}, {assortment} | {origin}) is missing")]
    MissingConditional {
        assortment: Assortment,
        origin: usize,
        outcome: usize,
    },

    #[error("conditional table has {} failing (S, i) pairs; first: {}", .0.len(), first_failure(.0))]
    ConditionalFailures(Vec<ConditionalFailure>),

    #[error(
        "underdetermined system: rank {rank} < {unknowns} free unknowns (max residual {residual:e})"
    )]
    UnderdeterminedSystem {
        rank: usize,
        unknowns: usize,
        residual: f64,
    },

    #[error("system {system}: {source}")]
    System {
        system: SystemId,
        #[source]
        source: Box<Error>,
    },

    #[error("random walk did not absorb within {max_steps} steps")]
    WalkLimitExceeded { max_steps: usize },

    #[error("parse error: {0}")]
    Parse(String),
}

fn first_failure(failures: &[ConditionalFailure]) -> String {
    match failures.first() {
        Some(f) => format!("(S={}, i={}): {}", f.assortment, f.origin, f.error),
        None => "none".to_string(),
    }
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Strips `System` wrappers and returns the innermost error.
    pub fn root(&self) -> &Error {
        match self {
            Error::System { source, .. } => source.root(),
            other => other,
        }
    }
}
