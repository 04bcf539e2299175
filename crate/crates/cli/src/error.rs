use unipunc_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 2 for bad usage or bad input files, 1 for failures during compute.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::Io { .. }
                | Error::BadMagic { .. }
                | Error::Version { .. }
                | Error::PayloadLength { .. }
                | Error::Malformed { .. }
                | Error::Corpus { .. }
                | Error::ConfigMismatch(_)
                | Error::ShapeMismatch { .. }
                | Error::UnknownParameter(_)
                | Error::InvalidArgument(_)
                | Error::AudioTooShort { .. }
                | Error::NoWords
                | Error::Empty(_) => 2,
                _ => 1,
            },
        }
    }
}
