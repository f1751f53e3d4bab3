use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{field} evaluated to a non-finite value at state {state:?}")]
    NonFiniteEvaluation { field: &'static str, state: Vec<f64> },

    #[error("state norm {norm:e} exceeded guard radius {guard:e} at t = {time}")]
    Blowup { time: f64, norm: f64, guard: f64 },

    #[error("path {index} failed: {source}")]
    PathFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("histograms are not on identical grids")]
    BinningMismatch,

    #[error("all {total} embedded chains failed to return to the ball within the time cap")]
    ReturnTimeout { total: usize },

    #[error("function is not centered: mean {mean:e} exceeds 3 x stderr {stderr:e}")]
    UncenteredInput { mean: f64, stderr: f64 },

    #[error("running Green-Kubo integral did not plateau before lag {lag_max} (partial value {partial:e})")]
    NoPlateau { lag_max: f64, partial: f64 },

    #[error("point {point:?} lies outside the tabulated grid")]
    InterpolationRange { point: Vec<f64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV failure: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON failure: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn in_path(self, index: usize) -> Self {
        match self {
            e @ Error::PathFailed { .. } => e,
            e => Error::PathFailed {
                index,
                source: Box::new(e),
            },
        }
    }
}
