use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants split into two broad classes (see [`Error::is_validation`]):
/// problems with the caller's input and numerical/runtime failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed row {line}: {msg}")]
    MalformedRow { line: u64, msg: String },

    #[error("duplicate censoring row for subject {id}")]
    DuplicateCensoring { id: String },

    #[error("missing censoring row for subject {id}")]
    MissingCensoring { id: String },

    #[error("event after censoring for subject {id} (event {event}, censoring {censor})")]
    EventAfterCensoring { id: String, event: f64, censor: f64 },

    #[error("invalid subject {id}: {msg}")]
    InvalidSubject { id: String, msg: String },

    #[error("duplicate subject id {0}")]
    DuplicateId(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty snapshot: no subject enrolled before calendar time {0}")]
    EmptySnapshot(f64),

    #[error("no events")]
    NoEvents,

    #[error("snapshot is blinded; treatment codes are required")]
    Blinded,

    #[error("degenerate design: all subjects are in one arm")]
    DegenerateArms,

    #[error("nonidentifiable effect: |beta| reached {beta:.3} (all events in one arm)")]
    Nonidentifiable { beta: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (beta {beta}, score {score:e})")]
    NonConvergence {
        iterations: usize,
        beta: f64,
        score: f64,
    },

    #[error("empty risk set at event time {0}")]
    EmptyRiskSet(f64),

    #[error("non-positive model information {0}")]
    NonPositiveInformation(f64),

    #[error("root bracket failure: {0}")]
    BracketFailure(String),

    #[error("too few subjects: {0}")]
    TooFewSubjects(usize),

    #[error("bootstrap exhausted {0} redraw attempts without a resample containing events")]
    BootstrapExhausted(usize),

    #[error("every replicate failed to reach an analysis")]
    NoCompletedReplicates,
}

impl Error {
    /// True for errors caused by invalid input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Nonidentifiable { .. }
                | Error::NonConvergence { .. }
                | Error::NonPositiveInformation(_)
                | Error::BracketFailure(_)
                | Error::BootstrapExhausted(_)
                | Error::NoCompletedReplicates
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
