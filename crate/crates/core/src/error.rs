use thiserror::Error;

/// Why a model evolution stopped before reaching the end of its time grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Diverged,
    Timeout,
    Stiff,
}

impl std::fmt::Display for FailureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FailureKind::Diverged => "diverged",
            FailureKind::Timeout => "timeout",
            FailureKind::Stiff => "stiff",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration diverged at t = {t_last} (state bound {bound:e})")]
    IntegrationDiverged { t_last: f64, bound: f64 },

    #[error("evolution failed ({kind}) after {last_index} valid samples")]
    EvolutionFailed {
        kind: FailureKind,
        last_index: usize,
    },

    #[error("reference series for variable {variable} has zero standard deviation")]
    DegenerateReference { variable: usize },

    #[error("window length {window_len} exceeds series length {n}")]
    WindowTooLong { window_len: usize, n: usize },

    #[error("rescale percentile is zero (all active functionals vanish)")]
    DegeneratePercentile,

    #[error("subset of {size} timepoints is too small for {n_active} active terms")]
    SubsetTooSmall { size: usize, n_active: usize },

    #[error("least-squares system is rank deficient (rank {rank} < {n_cols})")]
    RankDeficient { rank: usize, n_cols: usize },

    #[error("no culling candidates remain")]
    NoCandidates,

    #[error("variable {variable} shares no terms with the reference model")]
    NoTrueOverlap { variable: usize },

    #[error("no iteration produced a model that evolved on every trajectory")]
    NoViableModel,

    #[error("models are defined over different libraries: {0}")]
    MismatchedLibrary(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
