use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("budget exceeded: {what} (reached {count})")]
    Budget { what: String, count: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn budget(what: impl Into<String>, count: u64) -> Self {
        Error::Budget { what: what.into(), count }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Check(_) => 1,
            Error::Config(_) | Error::Parse(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::Budget { .. } => 3,
        }
    }
}
