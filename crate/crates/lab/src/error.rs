use std::path::PathBuf;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    /// Bad configuration, flags or input files.
    #[error("{0}")]
    Validation(String),
    #[error("{path}: line {line}: {message}")]
    Line { path: PathBuf, line: usize, message: String },
    #[error("missing prerequisite artifact {}", .0.display())]
    Missing(PathBuf),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] rlstab_core::Error),
}

impl LabError {
    /// 1 for validation problems, 2 for runtime and numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Validation(_) | LabError::Line { .. } => 1,
            LabError::Core(rlstab_core::Error::InvalidConfig(_)) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> LabError {
    LabError::Validation(msg.into())
}
