use thiserror::Error;

/// Errors raised by the core operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index out of range: {what} = {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("sample for prompt {0} is still in flight")]
    InFlightSample(u64),
    #[error("sample for prompt {0} has not been graded")]
    Ungraded(u64),
    #[error("sample for prompt {0} is missing train-engine log-probabilities")]
    MissingTrainLogps(u64),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: [usize; 3], right: [usize; 3] },
    #[error("state space too large: {0} sequences")]
    StateSpaceTooLarge(u128),
    #[error("version {birth} is ahead of current version {current}")]
    FutureVersion { birth: u64, current: u64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
