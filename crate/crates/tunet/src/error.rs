use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Everything a command can fail with, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, unknown or ill-typed config keys, invalid settings.
    #[error("{0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    /// Malformed or incompatible input files.
    #[error("{0}")]
    Data(String),

    /// Training produced NaN or infinite values.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 usage/config, 2 data (including IO), 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io { .. } | CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<tunet_core::Error> for CliError {
    fn from(e: tunet_core::Error) -> Self {
        use tunet_core::Error as E;
        match e {
            E::Usage(_) => CliError::Config(e.to_string()),
            E::NonFinite { .. } => CliError::Numeric(e.to_string()),
            E::Dimension { .. } | E::DataLength { .. } => CliError::Data(e.to_string()),
        }
    }
}

/// Attach a path to IO results.
pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| CliError::io(path, e))
    }
}
