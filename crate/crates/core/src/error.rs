use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("utterance {utterance}: {labels} labels need at least {required} frames, got {frames}")]
    Unrealizable {
        utterance: String,
        labels: usize,
        required: usize,
        frames: usize,
    },

    #[error("unknown {kind} `{name}`{}", .context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Unknown {
        kind: &'static str,
        name: String,
        context: Option<String>,
    },

    #[error("symbol table mismatch: {0}")]
    SymbolMismatch(String),

    #[error("transducer is not deterministic: {0}")]
    NonDeterministic(String),

    #[error("determinization exceeded its budget of {budget} states")]
    DeterminizeBudget { budget: usize },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("corpus validation failed:\n  {}", .0.join("\n  "))]
    Corpus(Vec<String>),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::NonFinite { .. } => "non-finite",
            Error::Unrealizable { .. } => "unrealizable",
            Error::Unknown { .. } => "unknown-reference",
            Error::SymbolMismatch(_) => "symbol-mismatch",
            Error::NonDeterministic(_) => "non-deterministic",
            Error::DeterminizeBudget { .. } => "determinize-budget",
            Error::Parse { .. } => "parse",
            Error::Corpus(_) => "corpus",
            Error::Training(_) => "training",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
