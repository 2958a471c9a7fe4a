use std::path::{Path, PathBuf};

use lumidec_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// The file exists but is not a well-formed image.
    #[error("{}: cannot decode: {msg}", path.display())]
    Decode { path: PathBuf, msg: String },
    /// Well-formed, but not 8-bit RGB.
    #[error("{}: unsupported image format: {msg}", path.display())]
    Unsupported { path: PathBuf, msg: String },
    /// A core error tied to one file.
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: CoreError },
}

/// Error classes the command line maps to exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
            ErrorClass::Io => 5,
        }
    }
}

fn core_class(e: &CoreError) -> ErrorClass {
    match e {
        CoreError::Dataset(_) => ErrorClass::Data,
        CoreError::NonFinite(_) => ErrorClass::Numeric,
        CoreError::Integrity(_) | CoreError::Format(_) => ErrorClass::Io,
        CoreError::Config(_)
        | CoreError::Shape(_)
        | CoreError::Dimension(_)
        | CoreError::Geometry(_)
        | CoreError::Contract(_)
        | CoreError::Bounds(_) => ErrorClass::Config,
    }
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn file(path: &Path, source: CoreError) -> Self {
        Error::File { path: path.to_path_buf(), source }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Core(CoreError::Config(msg.into()))
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Core(e) => core_class(e),
            Error::Io { .. } => ErrorClass::Io,
            Error::Decode { .. } | Error::Unsupported { .. } => ErrorClass::Data,
            Error::File { source, .. } => match source {
                // problems inside an image file are data problems, inside a
                // checkpoint file they are file problems
                CoreError::Dimension(_) | CoreError::Contract(_) => ErrorClass::Data,
                other => core_class(other),
            },
        }
    }
}
