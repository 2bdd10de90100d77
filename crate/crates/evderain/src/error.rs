use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure of a command. Every variant maps to its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),

    #[error("no such file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {reason}", .path.display())]
    Config { path: PathBuf, reason: String },

    #[error("{}:{line}: {reason}", .path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("{}: {reason}", .path.display())]
    Checkpoint { path: PathBuf, reason: String },

    #[error("checkpoint does not match config: {0}")]
    Mismatch(String),

    #[error("{0}")]
    UndefinedMetric(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: evderain_core::Error,
    },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::MissingFile(_) => 3,
            Error::Io { .. } => 4,
            Error::Config { .. } => 5,
            Error::Parse { .. } => 6,
            Error::Checkpoint { .. } => 7,
            Error::Mismatch(_) => 8,
            Error::UndefinedMetric(_) => 9,
            Error::Core { .. } => 10,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::MissingFile(_) => "missing-file",
            Error::Io { .. } => "io",
            Error::Config { .. } => "bad-config",
            Error::Parse { .. } => "parse",
            Error::Checkpoint { .. } => "bad-checkpoint",
            Error::Mismatch(_) => "checkpoint-mismatch",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::Core { .. } => "invalid-data",
        }
    }

    /// `evderain: error kind=<kind> code=<n> reason="<json-escaped text>"`
    pub fn one_line(&self) -> String {
        let reason = serde_json::to_string(&self.to_string()).unwrap_or_else(|_| "\"?\"".into());
        format!("evderain: error kind={} code={} reason={}", self.kind(), self.exit_code(), reason)
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    /// Wraps a core error; shape and missing-parameter failures raised
    /// while checking a checkpoint become [`Error::Mismatch`] at the call
    /// site instead.
    pub(crate) fn core(context: impl Into<String>, source: evderain_core::Error) -> Self {
        match source {
            evderain_core::Error::UndefinedMetric(p) => Error::UndefinedMetric(format!(
                "{}: metric undefined, partial report pb={} tb={} pr={} tr={} sr={:?} nr={:?}",
                context.into(),
                p.pb,
                p.tb,
                p.pr,
                p.tr,
                p.sr,
                p.nr
            )),
            source => Error::Core {
                context: context.into(),
                source,
            },
        }
    }
}
