//! Harness errors with process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Run {
        context: String,
        #[source]
        source: cowboy::Error,
    },

    #[error(transparent)]
    Core(#[from] cowboy::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("report: {0}")]
    Report(String),
}

impl HarnessError {
    /// CLI exit code: 2 config, 3 numeric failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Io(_) | HarnessError::Report(_) => 4,
            HarnessError::Core(e) | HarnessError::Run { source: e, .. } => match e {
                cowboy::Error::Config(_) => 2,
                cowboy::Error::Io(_)
                | cowboy::Error::Checkpoint(_)
                | cowboy::Error::IdxMagic { .. }
                | cowboy::Error::IdxTruncated { .. }
                | cowboy::Error::IdxCountMismatch { .. }
                | cowboy::Error::IdxLimit { .. } => 4,
                _ => 3,
            },
        }
    }
}

/// Attaches run context to a core error.
pub trait Context<T> {
    fn run_context(self, ctx: &str) -> std::result::Result<T, HarnessError>;
}

impl<T> Context<T> for std::result::Result<T, cowboy::Error> {
    fn run_context(self, ctx: &str) -> std::result::Result<T, HarnessError> {
        self.map_err(|source| HarnessError::Run {
            context: ctx.to_string(),
            source,
        })
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
