use std::path::PathBuf;

use cbp_abc::Error as CoreError;

/// Everything a subcommand can fail with, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    ConfigLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: row {row}: {message}")]
    DataRow { path: PathBuf, row: usize, message: String },

    #[error("data: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for configuration problems, 2 for data problems, 3 when the
    /// simulation budget runs out.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::ConfigLine { .. } | Self::Config(_) => 1,
            Self::DataRow { .. } | Self::Data(_) | Self::Io { .. } => 2,
            Self::Core(e) => match e {
                CoreError::BudgetExceeded { .. } => 3,
                CoreError::Config(_)
                | CoreError::InvalidOffspringLaw(_)
                | CoreError::InvalidControlLaw(_)
                | CoreError::Domain(_) => 1,
                _ => 2,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "config",
            3 => "budget",
            _ => "data",
        }
    }

    /// One-line JSON record for standard error.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
