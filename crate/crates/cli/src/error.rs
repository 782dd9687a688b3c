use thiserror::Error;

/// Errors surfaced by the command line; each maps to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, config or input files (exit 1).
    #[error("{0}")]
    Usage(String),

    /// The pipeline ran but could not produce a result (exit 2).
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Pipeline(_) => 2,
        }
    }
}

impl From<sindy_core::Error> for CliError {
    fn from(e: sindy_core::Error) -> Self {
        use sindy_core::Error as E;
        match e {
            E::InvalidArgument(_)
            | E::Parse(_)
            | E::Io(_)
            | E::MismatchedLibrary(_)
            | E::WindowTooLong { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Pipeline(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("i/o error: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
