use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-uniform spacing in series `{series}` at row {index}")]
    NonUniformSpacing { series: String, index: usize },

    #[error("duplicate timestamp {timestamp} in series `{series}`")]
    DuplicateTimestamp { series: String, timestamp: i64 },

    #[error("cannot parse {what} from `{value}`")]
    Parse { what: &'static str, value: String },

    #[error("series `{series}` too short: length {len}, need at least {need}")]
    SeriesTooShort {
        series: String,
        len: usize,
        need: usize,
    },

    #[error("window length {tau} requires at least {need} points, series has {len}")]
    WindowTooLong { tau: usize, len: usize, need: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate residuals: every residual equals the median")]
    DegenerateResiduals,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("series ids overlap between training and unseen sets: {0:?}")]
    SeriesOverlap(Vec<String>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
