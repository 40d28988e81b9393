use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] scbf_core::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("phase `{phase}` failed: {source}")]
    Phase {
        phase: String,
        #[source]
        source: Box<HarnessError>,
    },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn in_phase(phase: &str, source: HarnessError) -> Self {
        Self::Phase {
            phase: phase.to_string(),
            source: Box::new(source),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Core(_) => "core",
            Self::Config(_) => "config",
            Self::Io { .. } => "io",
            Self::Parse(_) => "parse",
            Self::Phase { source, .. } => source.kind(),
        }
    }

    /// Machine-readable summary.
    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            kind: self.kind(),
            phase: match self {
                Self::Phase { phase, .. } => Some(phase.clone()),
                _ => None,
            },
            message: self.to_string(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub phase: Option<String>,
    pub message: String,
}
