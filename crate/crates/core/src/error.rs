use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension too small: {0}")]
    DimensionTooSmall(String),
    #[error("volume is not cubic: {nx}x{ny}x{nz}")]
    NonCubic { nx: usize, ny: usize, nz: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("odd dimension {0}; k-space cropping needs even dimensions")]
    OddDimension(usize),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("missing tile {0}")]
    MissingTile(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("structure mismatch: {0}")]
    StructureMismatch(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("{path}:{line}: {msg}")]
    Config {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI: 3 for input validation, 4 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
