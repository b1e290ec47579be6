use std::path::PathBuf;

use qfp_core::QfpError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TOLERANCE: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("tolerance failure: {0}")]
    Tolerance(String),
    #[error("resource cap exceeded: {0}")]
    Resource(String),
    #[error("verification failed for {0} file(s)")]
    Verification(usize),
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<CliError>,
    },
    #[error(transparent)]
    Core(#[from] QfpError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Tolerance(_) => EXIT_TOLERANCE,
            Self::Resource(_) => EXIT_RESOURCE,
            Self::Stage { source, .. } => source.exit_code(),
            Self::Core(e) => match e {
                QfpError::Resource(_) => EXIT_RESOURCE,
                QfpError::Truncation { .. } | QfpError::TailMass { .. } | QfpError::NotPsd(_) | QfpError::NonFinite(_) => {
                    EXIT_TOLERANCE
                }
                QfpError::InvalidParameter(_) | QfpError::UnknownLabel(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            },
            Self::Verification(_) | Self::Io { .. } | Self::Json { .. } => EXIT_FAILURE,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Self::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
