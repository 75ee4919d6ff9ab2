use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is outside the supported range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two inputs that must agree (dimensions, grids, meshes) do not.
    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    /// The linear system factorization failed.
    #[error("singular system: {0}")]
    Singular(String),

    /// A configuration file or CLI value could not be interpreted.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
