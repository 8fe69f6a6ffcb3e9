use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or out-of-range configuration.
    #[error("{0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// A computation failed after validation.
    #[error(transparent)]
    Compute(#[from] foldlab_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) | CliError::Csv(_) => 1,
            CliError::Compute(_) => 2,
        }
    }
}
