use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ordering error: previous timestamp {previous} is not before current timestamp {current}")]
    Ordering { previous: i64, current: i64 },

    #[error("context error: frame {current} has fewer than {pool} predecessors and only serves as context")]
    Context { current: usize, pool: usize },

    #[error("generation error at frame {frame}: {message}")]
    Generation { frame: usize, message: String },

    #[error("non-finite loss at iteration {iteration} (sequence {sequence}, frame {frame})")]
    NonFinite {
        iteration: usize,
        sequence: String,
        frame: usize,
    },

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error at {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    ///
    /// 2 for anything the caller can fix by changing inputs, 3 for numeric
    /// failures, 1 for environment problems (I/O).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } => 3,
            Error::Io { .. } => 1,
            _ => 2,
        }
    }
}
