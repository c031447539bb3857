use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const TOLERANCE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Numerical(cctsens::Error),

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Numerical(_) | CliError::Io { .. } => exit::NUMERICAL,
        }
    }
}

impl From<cctsens::Error> for CliError {
    fn from(e: cctsens::Error) -> Self {
        match e {
            cctsens::Error::Config(msg) => CliError::Config(msg),
            cctsens::Error::UnknownParameter(name) => CliError::Config(format!("unknown parameter `{name}`")),
            cctsens::Error::NoActiveParameter => CliError::Config("no active parameter designated".into()),
            other => CliError::Numerical(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
