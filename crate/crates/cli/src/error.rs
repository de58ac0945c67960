use std::path::PathBuf;

use skinaug_core::curation::CurationError;
use skinaug_core::evaluator::EvalError;
use skinaug_core::genclient::GenClientError;
use skinaug_core::manifest::ManifestError;
use skinaug_core::splitter::SplitError;
use skinaug_core::trainer::TrainerError;
use thiserror::Error;

/// Stage failure, classified by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 1.
    #[error("{0}")]
    Validation(String),
    /// Exit 2.
    #[error("{0}")]
    MissingInput(String),
    /// Exit 3.
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::MissingInput(_) => 2,
            CliError::Backend(_) => 3,
        }
    }

    pub fn missing(path: &std::path::Path, what: &str) -> CliError {
        CliError::MissingInput(format!("{what} not found at {}; run the stage that produces it first", path.display()))
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

fn io_error(e: std::io::Error, context: &str) -> CliError {
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::MissingInput(format!("{context}: {e}"))
    } else {
        CliError::Validation(format!("{context}: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        io_error(e, "i/o error")
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(format!("malformed json: {e}"))
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::Io(io) => io_error(io, "manifest"),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<SplitError> for CliError {
    fn from(e: SplitError) -> Self {
        match e {
            SplitError::Manifest(m) => m.into(),
            SplitError::InsufficientSynthetics { .. } => CliError::MissingInput(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<GenClientError> for CliError {
    fn from(e: GenClientError) -> Self {
        match e {
            GenClientError::BackendAuthError(_)
            | GenClientError::BackendRateLimited { .. }
            | GenClientError::BackendFailed { .. }
            | GenClientError::ContentRejected(_) => CliError::Backend(e.to_string()),
            GenClientError::Io(io) => io_error(io, "generation"),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<CurationError> for CliError {
    fn from(e: CurationError) -> Self {
        match e {
            CurationError::Io(io) => io_error(io, "curation store"),
            CurationError::IncompleteSelection(_) | CurationError::NoSeeds { .. } => {
                CliError::MissingInput(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        match e {
            TrainerError::MissingPayload { .. } => CliError::MissingInput(e.to_string()),
            TrainerError::Io(io) => io_error(io, "training"),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(io) => io_error(io, "evaluation"),
            EvalError::MissingPredictions(_) => CliError::MissingInput(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

/// Read a file, mapping absence to a missing-input error that names it.
pub fn read_input(path: &std::path::Path, what: &str) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::missing(path, what),
        _ => CliError::Validation(format!("reading {}: {e}", path.display())),
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path, what: &str) -> Result<T> {
    let bytes = read_input(path, what)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Directory listing; a missing directory is a missing input.
pub fn list_dir(dir: &std::path::Path, what: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::missing(dir, what),
        _ => CliError::Validation(format!("listing {}: {e}", dir.display())),
    })?;
    let mut out = Vec::new();
    for entry in entries {
        out.push(entry?.path());
    }
    out.sort();
    Ok(out)
}
