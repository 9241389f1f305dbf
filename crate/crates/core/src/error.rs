use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no subject records supplied")]
    EmptyInput,

    #[error("arm index {arm} outside the allowed range 0..{arms}")]
    ArmOutOfRange { arm: u32, arms: u32 },

    #[error("stratum `{0}` has no subjects")]
    EmptyStratum(String),

    #[error("stratum `{label}`: {reason}")]
    InvalidStratum { label: String, reason: String },

    #[error("every stratum is missing a treatment arm")]
    AllStrataDegenerate,

    #[error("pooled {0} arm has no subjects")]
    EmptyArm(&'static str),

    #[error("comparison arms must differ (arm {0} given twice)")]
    SameArm(usize),

    #[error("only {valid} of {requested} bootstrap replicates produced an estimate")]
    TooFewValidReplicates { valid: usize, requested: usize },

    #[error("hypergeometric variance is zero in every usable stratum")]
    ZeroTotalVariance,

    #[error("negative variance estimate ({0:e}) cannot form an interval")]
    NegativeVariance(f64),

    #[error("dimension mismatch: expected {expected} strata, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("truncated-normal rejection sampler gave up after {0} proposals")]
    RejectionCap(u64),

    #[error("response probability {value} for stratum {stratum} is outside [0, 1]")]
    InfeasibleProbability { stratum: usize, value: f64 },

    #[error("potential-outcome proportions for stratum {stratum} are invalid: {reason}")]
    InvalidLambda { stratum: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
