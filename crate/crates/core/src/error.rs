use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants fall into two families: input problems (bad files, bad
/// configuration, violated preconditions) and numerical problems (degenerate
/// fits, unobservable quantities). The CLI maps these onto exit codes via
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate calibration sweep: {0}")]
    FitDegenerate(String),

    #[error("sensor is not static: |acc| = {acc_norm:.3} m/s^2 outside the quasi-static band")]
    NotStatic { acc_norm: f64 },

    #[error("magnetic field is (anti)parallel to gravity within {angle_deg:.2} deg; heading undefined")]
    DegenerateDip { angle_deg: f64 },

    #[error("displacement unobservable: field gradient has rank {rank} of 3")]
    UnobservableDisplacement { rank: usize },

    #[error("transfer function unobservable: field change over window is {delta_b:.3e} uT")]
    UnobservableTransfer { delta_b: f64 },

    #[error("incomplete initialization: no north reference for sensor(s) {0:?}")]
    IncompleteInitialization(Vec<String>),

    #[error("numerically degenerate: {0}")]
    Numerical(String),

    #[error("field evaluated at dipole singularity ({distance:.3e} m from source)")]
    SingularPoint { distance: f64 },

    #[error("frame mismatch: cannot compose {left} with {right}")]
    FrameMismatch { left: String, right: String },

    #[error("at t = {t} s: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error at `{path}`: {msg}")]
    Schema { path: String, msg: String },

    #[error("unmatched sensor id(s): {0:?}")]
    UnmatchedSensors(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Attach the timestamp of the sample that triggered the failure.
    pub fn at_time(self, t: f64) -> Self {
        Error::AtTime {
            t,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 for input/schema problems, 3 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::AtTime { source, .. } => source.exit_code(),
            Error::Contract(_)
            | Error::InsufficientData { .. }
            | Error::Parse { .. }
            | Error::Schema { .. }
            | Error::UnmatchedSensors(_)
            | Error::FrameMismatch { .. }
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::FitDegenerate(_)
            | Error::NotStatic { .. }
            | Error::DegenerateDip { .. }
            | Error::UnobservableDisplacement { .. }
            | Error::UnobservableTransfer { .. }
            | Error::IncompleteInitialization(_)
            | Error::Numerical(_)
            | Error::SingularPoint { .. } => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
