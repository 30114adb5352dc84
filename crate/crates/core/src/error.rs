use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter record violates one of its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input {value} at index {index} outside encoder range [{lo}, {hi}]")]
    InputOutOfRange {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("bound fraction left [0, 1] at t = {time} s (b = {value}); use a smaller timestep")]
    Unstable { time: f64, value: f64 },

    #[error("{what} too short: need {required} samples, have {available}")]
    TooShort {
        what: &'static str,
        required: usize,
        available: usize,
    },

    #[error("{what} diverged at step {step}")]
    Divergence { what: &'static str, step: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("binding-probability calibration failed: {0}")]
    Calibration(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by invalid user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_) | Error::InputOutOfRange { .. } | Error::Json(_) | Error::Budget(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
