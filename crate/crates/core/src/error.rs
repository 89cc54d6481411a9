use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("head would move left of cell 1")]
    HeadUnderflow,
    #[error("step limit of {0} exceeded")]
    StepLimitExceeded(u64),
    #[error("space limit of {limit} cells exceeded (head reached cell {reached})")]
    SpaceLimitExceeded { limit: usize, reached: usize },
    #[error("queue is empty")]
    EmptyQueue,
    #[error("input of length {len} does not fit a queue of {queue_size} cells")]
    InputTooLong { len: usize, queue_size: usize },

    #[error("state `{0}` is not a checkpoint")]
    NotAtCheckpoint(String),

    #[error("post machine is not adapted: {0}")]
    NotAdapted(String),
    #[error("offset {offset} outside window of {window}")]
    OffsetOutOfWindow { offset: usize, window: usize },
    #[error("synthesized network needs {needed} hidden units, cap is {cap}")]
    SynthesisOverflow { needed: usize, cap: usize },

    #[error("flag coordinate {0} at a generation position (expected 2 or 3)")]
    FlagOutOfRange(i64),
    #[error("argmax over logits is not unique")]
    AmbiguousArgmax,
    #[error("halting token symbol `{0}` is not an answer symbol")]
    NoAnswerSymbol(String),
    #[error("activation outside the exact integer contract: {0}")]
    Activation(String),
    #[error("no feed-forward entry for {0}")]
    MissingDispatch(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
