use thiserror::Error;

#[derive(Debug, Error)]
pub enum XtfError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl XtfError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        XtfError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, configs, data) as opposed
    /// to internal invariant failures.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            XtfError::NonFinite(_) | XtfError::Contract(_) | XtfError::Training(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, XtfError>;
