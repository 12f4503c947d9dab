use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample rate {sample_rate} Hz aliases a {bandwidth} Hz bandwidth (need at least {min_rate} Hz)")]
    Aliasing {
        sample_rate: f64,
        bandwidth: f64,
        min_rate: f64,
    },

    #[error("record too short: {0}")]
    RecordTooShort(String),

    #[error("window [{start}, {end}] s lies outside the record [0, {duration}] s")]
    WindowOutsideRecord { start: f64, end: f64, duration: f64 },

    #[error("pulse sequence invariant violated: {0}")]
    SequenceInvariant(String),

    #[error("probe carries {fraction:.3e} of its energy outside the probe window")]
    ProbeOutsideWindow { fraction: f64 },

    #[error("medium parameters define no transparency window: {0}")]
    UnsolvableWindow(String),

    #[error("transmission window not resolved: {0}")]
    WindowNotResolved(String),

    #[error("records do not match: {0}")]
    MismatchedRecords(String),

    #[error("no resolvable peak (peak {peak:.3e}, noise floor {noise:.3e})")]
    NoPeak { peak: f64, noise: f64 },

    #[error("fit did not converge after {0} iterations")]
    FitDidNotConverge(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("count record is all zeros")]
    AllZeroCounts,

    #[error("target unreachable: {0}")]
    Unreachable(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
