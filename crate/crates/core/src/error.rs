use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("spawn placement failed for agent {0} after 100 one-meter nudges")]
    SpawnPlacement(u32),
    #[error("empty waypoint list")]
    EmptyWaypoints,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed message: {0}")]
    Wire(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for errors caused by reading or writing files rather than by
    /// bad configuration content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
