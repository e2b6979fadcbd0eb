use std::fmt;

use thiserror::Error;

use crate::solver::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("inequality not applicable: {0}")]
    InapplicableInequality(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("invalid exponents: {0}")]
    InvalidExponents(String),

    #[error("structure condition {condition} violated at {sample}: {detail}")]
    StructureViolation {
        condition: &'static str,
        sample: String,
        detail: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("history underflow: time {t} outside [{lo}, {hi}]")]
    HistoryUnderflow { t: f64, lo: f64, hi: f64 },

    #[error(transparent)]
    Divergence(#[from] Box<Divergence>),

    #[error("q = {q} is outside the theory: q > q* = {q_star} required")]
    OutOfTheory { q: f64, q_star: f64 },

    #[error("embedding failure: {0}")]
    Embedding(String),

    #[error("incomplete problem: {0}")]
    IncompleteSpec(String),

    #[error("envelope form unavailable: {0}")]
    FormUnavailable(String),

    #[error("norm mismatch: {0}")]
    Mismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("{field}: {constraint}")]
    Semantic { field: String, constraint: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn semantic(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Semantic {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    /// Whether this error belongs to the configuration class (exit status 4).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Syntax { .. }
                | Error::Semantic { .. }
                | Error::OutOfTheory { .. }
                | Error::InvalidExponents(_)
                | Error::IncompleteSpec(_)
                | Error::Embedding(_)
        )
    }
}

/// Blow-up diagnostics; carries the partial trajectory computed up to the failing step.
pub struct Divergence {
    pub t: f64,
    pub l2: f64,
    pub partial: Trajectory,
}

impl fmt::Debug for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Divergence")
            .field("t", &self.t)
            .field("l2", &self.l2)
            .field("partial_nodes", &self.partial.len())
            .finish()
    }
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "solution diverged at t = {} with |u|_2 = {}", self.t, self.l2)
    }
}

impl std::error::Error for Divergence {}
