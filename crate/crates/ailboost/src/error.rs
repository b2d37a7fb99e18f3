use thiserror::Error;

/// Errors surfaced by library operations.
///
/// Validation of raw inputs (MDPs, policies) goes through report types
/// instead; these variants cover contract violations and numerical
/// failures detected while running.
#[derive(Debug, Error)]
pub enum Error {
    #[error("occupancy solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    SolverDiverged { residual: f64, iterations: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("weights not synchronized: call set_weights after appending datasets")]
    StaleWeights,

    #[error("weight vector length {got} does not match dataset count {expected}")]
    WeightLengthMismatch { got: usize, expected: usize },

    #[error("weights are not a probability simplex: {0}")]
    NotSimplex(String),

    #[error("ensemble weights violate invariants: {0}")]
    InvalidEnsemble(String),

    #[error("non-finite value in {context} at round {round}: {detail}")]
    NonFinite {
        context: String,
        round: usize,
        detail: String,
    },

    #[error("degenerate normalization: expert and random returns differ by less than {0:.3e}")]
    DegenerateNormalization(f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
