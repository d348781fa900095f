use std::io::ErrorKind;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, missing inputs, or a refused output directory.
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] neurodecode::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 for usage and validation problems, 1 for failures during computation.
    pub fn exit_code(&self) -> i32 {
        use neurodecode::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::Diverged(_) | E::NonFinite(_) | E::Shape(_) => 1,
                E::Io { source, .. } if source.kind() != ErrorKind::NotFound => 1,
                _ => 2,
            },
        }
    }
}
