use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric error at iteration {iteration}: {what}")]
    Numeric { iteration: u64, what: String },

    #[error("{0}")]
    External(String),

    #[error("training stalled at iteration {iteration}: all {batch} pairs in the batch have a vanishing margin gradient")]
    Stall { iteration: u64, batch: usize },
}
