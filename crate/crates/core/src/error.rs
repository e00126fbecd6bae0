use std::fmt;

use crate::chain::StateIndex;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage at which a bound computation failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Assemble,
    TransposeSolve,
    ColumnSolve,
    LowerBounds,
    DeltaBeta,
    UpperBounds,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Assemble => "assemble",
            Stage::TransposeSolve => "transpose solve",
            Stage::ColumnSolve => "column solve",
            Stage::LowerBounds => "lower bounds",
            Stage::DeltaBeta => "delta/beta",
            Stage::UpperBounds => "upper bounds",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("row of state {state} sums to {sum} (tolerance {tol})")]
    RowSum { state: StateIndex, sum: f64, tol: f64 },

    #[error("negative reward {value} at state {state}")]
    NegativeReward { state: StateIndex, value: f64 },

    #[error("negative certificate value {value} for {which} at state {state}")]
    NegativeCertificate {
        which: &'static str,
        state: StateIndex,
        value: f64,
    },

    #[error("delta = {delta:e} does not exceed the degeneracy threshold {threshold:e}")]
    DegenerateDelta { delta: f64, threshold: f64 },

    #[error("solver did not converge after {iterations} iterations (scaled residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("the truncation set leaks mass but no Lyapunov certificate was supplied")]
    MissingCertificate,

    #[error("chain is reducible or the stationary system is singular")]
    ReducibleChain,

    #[error("cycle exceeded {cap} steps without returning to the regeneration state")]
    CycleCap { cap: u64 },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{stage}: {source}")]
    AtStage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        match self {
            e @ Error::AtStage { .. } => e,
            e => Error::AtStage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Strips any stage wrapper.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_degenerate_delta(&self) -> bool {
        matches!(self.root(), Error::DegenerateDelta { .. })
    }
}
