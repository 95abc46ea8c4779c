use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite log-density for child {child} given parent {parent:?}")]
    NonFiniteWeight { child: usize, parent: Option<usize> },

    #[error("augmented Laplacian is singular")]
    Singular,

    #[error("no out-tree has positive weight")]
    ZeroPartition,

    #[error("numerical fault: {0}")]
    NumericalFault(String),

    #[error("rank-one update crosses a singularity (capacitance {capacitance:e}); refactorize")]
    CapacitanceBreakdown { capacitance: f64 },

    #[error("brute-force enumeration limited to T <= {max}, got {got}")]
    EnumerationTooLarge { max: usize, got: usize },

    #[error("label error: {0}")]
    Label(String),

    #[error("document error: {0}")]
    Document(String),

    #[error("evidence lower bound decreased by {decrease:e} at round {round}")]
    ElboDecrease { round: usize, decrease: f64 },
}

impl Error {
    /// True for failures of floating-point arithmetic rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular
                | Error::NumericalFault(_)
                | Error::CapacitanceBreakdown { .. }
                | Error::ElboDecrease { .. }
        )
    }
}
