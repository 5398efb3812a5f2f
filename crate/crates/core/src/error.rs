use std::path::PathBuf;

use thiserror::Error;

/// Reasons a single replicate's estimate could not be produced.
///
/// These are recorded per replicate and never abort a run.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationFailure {
    #[error("empty sample")]
    EmptySample,
    #[error("too few respondents: {have} for {need} parameters")]
    TooFewRespondents { have: usize, need: usize },
    #[error("fewer than two sampled villages")]
    TooFewVillages,
    #[error("singular system after dropping auxiliaries (condition number {condition:.3e})")]
    Singular { condition: f64 },
    #[error("outcome has a single class among respondents")]
    SingleClass,
    #[error("complete separation (|coefficient| {max_abs:.2} > 15)")]
    Separation { max_abs: f64 },
    #[error("logistic fit did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("fewer than two respondent clusters")]
    SingleCluster,
    #[error("inconsistent sample: {0}")]
    Inconsistent(String),
}

impl EstimationFailure {
    /// Short machine-friendly reason used in CSV output.
    pub fn reason(&self) -> &'static str {
        match self {
            EstimationFailure::EmptySample => "empty sample",
            EstimationFailure::TooFewRespondents { .. } => "too few respondents",
            EstimationFailure::TooFewVillages => "too few villages",
            EstimationFailure::Singular { .. } => "singular",
            EstimationFailure::SingleClass => "single class",
            EstimationFailure::Separation { .. } => "separation",
            EstimationFailure::NoConvergence { .. } => "no convergence",
            EstimationFailure::SingleCluster => "single cluster",
            EstimationFailure::Inconsistent(_) => "inconsistent sample",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("tuning of {what} failed: target {target} outside [{rate_lo:.4}, {rate_hi:.4}] on bracket [{lo}, {hi}]")]
    Tuning {
        what: &'static str,
        target: f64,
        lo: f64,
        hi: f64,
        rate_lo: f64,
        rate_hi: f64,
    },
    #[error(transparent)]
    Estimation(#[from] EstimationFailure),
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error("malformed input: {0}")]
    Input(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Config(_)
                | Error::Toml(_)
                | Error::MissingInput(_)
                | Error::Input(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
