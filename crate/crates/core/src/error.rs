use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unit {unit} is out of range for a graph with {n} units")]
    UnitOutOfRange { unit: usize, n: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unit {unit} has arm value {arm}, outside the mapping's arm set 0..{arms}")]
    ArmOutOfRange { unit: usize, arm: u8, arms: u8 },

    #[error("no closed-form propensity for {mapping} under {design}; use mc_propensity")]
    UnsupportedPropensity { mapping: String, design: String },

    #[error(
        "effective sample is empty: no unit has interior propensities for every exposure value"
    )]
    EmptyEffectiveSample,

    #[error("no units realize exposure value {0}")]
    EmptyCell(String),

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("symmetric eigendecomposition did not converge")]
    EigenNonConvergence,

    #[error("kernel over {size} units exceeds the dense size cap of {cap}")]
    SizeGuard { size: usize, cap: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("threshold dynamics reached no fixed point within {0} iterations")]
    NoFixedPoint(usize),

    #[error("no unit falls in the window |T - {t}| <= {h}")]
    EmptyWindow { t: f64, h: f64 },

    #[error("exposure variance is not positive at unit {0}")]
    ZeroVariance(usize),

    #[error("fewer than two usable points for a log-log slope")]
    TooFewPoints,

    #[error("draw {draw} (seed {seed}) failed: {source}")]
    Draw {
        draw: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    File { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::UnsupportedPropensity { .. } | Error::Json(_) => {
                ErrorKind::Config
            }
            Error::UnitOutOfRange { .. }
            | Error::Data(_)
            | Error::ArmOutOfRange { .. }
            | Error::EmptyEffectiveSample
            | Error::EmptyCell(_)
            | Error::Shape(_)
            | Error::File { .. }
            | Error::Io(_) => ErrorKind::Data,
            Error::RankDeficient(_)
            | Error::Singular(_)
            | Error::EigenNonConvergence
            | Error::SizeGuard { .. }
            | Error::NoFixedPoint(_)
            | Error::EmptyWindow { .. }
            | Error::ZeroVariance(_)
            | Error::TooFewPoints => ErrorKind::Numerical,
            Error::Draw { source, .. } => source.kind(),
        }
    }
}
