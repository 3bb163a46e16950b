use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OpError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("refusing to overwrite existing data in {}; pass --force", .0.display())]
    RefuseOverwrite(PathBuf),
    #[error("{0}")]
    Runtime(String),
}

impl OpError {
    /// 1 for usage and configuration problems, 2 for failures at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            OpError::Usage(_) | OpError::Config(_) | OpError::RefuseOverwrite(_) => 1,
            OpError::Runtime(_) => 2,
        }
    }

    pub fn config(what: impl std::fmt::Display) -> Self {
        OpError::Config(what.to_string())
    }

    pub fn runtime(what: impl std::fmt::Display) -> Self {
        OpError::Runtime(what.to_string())
    }
}
