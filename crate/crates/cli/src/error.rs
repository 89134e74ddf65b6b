use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl From<bsde_core::Error> for CliError {
    fn from(e: bsde_core::Error) -> Self {
        use bsde_core::Error as E;
        match e {
            E::InvalidArgument(_)
            | E::UnknownBenchmark(_)
            | E::UnknownParameter { .. }
            | E::Incompatible(_)
            | E::DimensionMismatch { .. } => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
