use thiserror::Error;

use crate::expr::{DomainError, ParseError};

#[derive(Debug, Error)]
pub enum Error {
    #[error("expression `{src}`: {source}")]
    Parse {
        src: String,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("diffusion matrix is not positive definite at x = {0:?}")]
    NondegeneracyViolation(Vec<f64>),
    #[error("action {0:?} lies outside the action box")]
    OutOfBox(Vec<f64>),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("simplex codebook with k = {k} atoms and resolution m = {m} is too large to index")]
    CodebookTooLarge { k: usize, m: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),
    #[error("state norm {norm} exceeded the blow-up limit at t = {t}")]
    NumericalBlowup { t: f64, norm: f64 },
    #[error("no exit before t = {0}")]
    MaxTimeExceeded(f64),
    #[error("discretization is not monotone at node {node}: {detail}")]
    MonotonicityViolation { node: usize, detail: String },
    #[error("linear solve failed: {0}")]
    SolverDivergence(String),
    #[error("policy iteration did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("no positive root of the Riccati equation")]
    NoPositiveRoot,
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("schedule entry {entry} is not coarser than the reference resolution {reference}")]
    ScheduleTooCoarse { entry: f64, reference: f64 },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(src: &str, source: ParseError) -> Self {
        Error::Parse { src: src.to_string(), source }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    /// True for errors caused by the user's input rather than by numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::InvalidModel(_)
                | Error::InvalidPolicy(_)
                | Error::InvalidGrid(_)
                | Error::InvalidSimConfig(_)
                | Error::Config { .. }
                | Error::ScheduleTooCoarse { .. }
                | Error::CodebookTooLarge { .. }
                | Error::NondegeneracyViolation(_)
                | Error::OutOfBox(_)
                | Error::Json(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Domain(_) => "domain",
            Error::InvalidModel(_) => "invalid_model",
            Error::NondegeneracyViolation(_) => "nondegeneracy_violation",
            Error::OutOfBox(_) => "out_of_box",
            Error::InvalidPolicy(_) => "invalid_policy",
            Error::CodebookTooLarge { .. } => "codebook_too_large",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidSimConfig(_) => "invalid_sim_config",
            Error::NumericalBlowup { .. } => "numerical_blowup",
            Error::MaxTimeExceeded(_) => "max_time_exceeded",
            Error::MonotonicityViolation { .. } => "monotonicity_violation",
            Error::SolverDivergence(_) => "solver_divergence",
            Error::NoConvergence(_) => "no_convergence",
            Error::NoPositiveRoot => "no_positive_root",
            Error::Config { .. } => "config",
            Error::ScheduleTooCoarse { .. } => "schedule_too_coarse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
