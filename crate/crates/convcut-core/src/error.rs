use thiserror::Error;

/// Error taxonomy shared by every module. The CLI maps these onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that cannot be combined, or a layer fed an input it cannot take.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid configuration; the message lists every violation found.
    #[error("config error: {0}")]
    Config(String),

    /// Bad input data (malformed file, out-of-range label, ...).
    #[error("data error: {0}")]
    Data(String),

    /// An API precondition was violated (e.g. backward on a non-scalar loss).
    #[error("contract error: {0}")]
    Contract(String),

    /// Checkpoint file problems: bad magic, truncation, entry mismatches.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A name that does not resolve (layer name, parameter name).
    #[error("lookup error: {0}")]
    Lookup(String),

    /// A forward op produced NaN/Inf from finite inputs.
    #[error("non-finite value produced by `{0}`")]
    NonFinite(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
