use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand extents disagree.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Kernel, stride or padding cannot produce an output.
    #[error("invalid geometry: {0}")]
    Geometry(String),
    /// A caller-side precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("index out of bounds: {0}")]
    Bounds(String),
    /// NaN or infinity reached a place that requires finite values.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// A named parameter is missing or has the wrong extents.
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    /// Malformed serialized data (bad magic, version, duplicate names).
    #[error("format error: {0}")]
    Format(String),
    /// Checksum mismatch or truncation.
    #[error("integrity error: {0}")]
    Integrity(String),
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
