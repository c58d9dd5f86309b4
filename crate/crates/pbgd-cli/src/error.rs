use std::fmt;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// A hard invariant or every solver run failed (exit 1).
    Invariant(String),
    /// Bad flags or configuration (exit 2).
    Usage(String),
    /// Filesystem failure (exit 3).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invariant(_) => 1,
            Self::Usage(_) => 2,
            Self::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Invariant(m) => write!(f, "invariant failure: {m}"),
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<pbgd::Error> for CliError {
    fn from(e: pbgd::Error) -> Self {
        match e {
            pbgd::Error::Io(io) => Self::Io(io.to_string()),
            pbgd::Error::Parse(m) => Self::Io(format!("malformed dataset: {m}")),
            pbgd::Error::Parameter(m) | pbgd::Error::Shape(m) => Self::Usage(m),
            other => Self::Invariant(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
