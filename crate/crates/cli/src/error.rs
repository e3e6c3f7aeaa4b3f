use std::path::{Path, PathBuf};

use cpforge::active::SessionError;
use cpforge::clustering::ClusterError;
use cpforge::cp::CpError;
use cpforge::dataset::RecordError;
use cpforge::dda::DdaError;
use cpforge::level::LevelError;
use cpforge::quality::ModelError;
use cpforge::sampler::SamplerError;
use thiserror::Error;

/// Every failure the binary can report. `Usage` maps to exit code 2, the
/// rest are domain errors (exit code 1).
#[derive(Debug, Error)]
pub enum AppError {
    #[error("UsageError: {0}")]
    Usage(String),
    #[error("ConfigError: {path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error("IoError: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("ParseError: {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("ValidationFailed: {path}: {count} problem(s)")]
    Invalid { path: PathBuf, count: usize },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cp(#[from] CpError),
    #[error(transparent)]
    Level(#[from] LevelError),
    #[error(transparent)]
    Dda(#[from] DdaError),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::Config { .. } => 2,
            _ => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn record(path: &Path, e: RecordError) -> Self {
        match e {
            RecordError::Io(source) => AppError::io(path, source),
            RecordError::Parse { line, msg } => AppError::Parse {
                path: path.to_path_buf(),
                msg: format!("line {line}: {msg}"),
            },
        }
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;
