use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("the intervention operator is undefined for the null action")]
    NullIntervention,
    #[error("malformed MDP: {}", .0.join("; "))]
    InvalidMdp(Vec<String>),
    #[error("invalid cost specification: {0}")]
    InvalidCost(String),
    #[error("invalid learning schedule: {0}")]
    InvalidSchedule(String),
    #[error("value iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("episode is over at step {step} (horizon {horizon})")]
    EpisodeOver { step: usize, horizon: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature Gram matrix is rank deficient (smallest eigenvalue {min_eigenvalue:e})")]
    RankDeficient { min_eigenvalue: f64 },
    #[error("augmented state space has {states} states, above the limit of {limit}")]
    ProductTooLarge { states: usize, limit: usize },
    #[error("transition estimation failed: {0}")]
    Estimation(String),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("weights diverged at step {step}: norm {norm:e} exceeds bound {bound:e}")]
    Divergence { step: u64, norm: f64, bound: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("in episode {episode}: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },
}

pub(crate) fn check_index(what: &'static str, index: usize, len: usize) -> Result<()> {
    if index < len {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange { what, index, len })
    }
}
