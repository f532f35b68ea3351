use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// An index or allocation falls outside the configured range.
    #[error("out of range: {0}")]
    Range(String),

    /// A caller broke an input contract (lengths, shapes).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Configuration failed validation; `field` names the offending key.
    #[error("invalid config `{field}`: {message}")]
    Config { field: String, message: String },

    /// The allocation cannot carry a transport block of at least 8 bits.
    #[error(
        "allocation too small: {n_re} resource elements at MCS {mcs} give {bits} payload bits"
    )]
    AllocationTooSmall { mcs: u8, n_re: usize, bits: i64 },

    /// A BLER curve never crosses the requested target.
    #[error("{curve} curve does not cross target BLER {target}")]
    NotCrossed { curve: &'static str, target: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("duplicate record key (trial {trial}, subframe {subframe})")]
    DuplicateKey { trial: u64, subframe: u64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
