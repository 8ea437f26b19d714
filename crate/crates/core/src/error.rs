use thiserror::Error;

/// Errors produced across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid geometry: distance {distance_m:e} m is below the node diameter {diameter_m:e} m")]
    InvalidGeometry { distance_m: f64, diameter_m: f64 },

    #[error("assimilation probability {value} exceeds 1; the small-count linear model does not hold here")]
    ModelOutOfRange { value: f64 },

    #[error("no burst up to {max_burst} molecules reaches the target symbol reliability {target}")]
    BurstOutOfRange { max_burst: u64, target: f64 },

    #[error("calibration failed at {distance_um} um: {achieved} absorptions, at least {required} required")]
    CalibrationFailed {
        distance_um: f64,
        achieved: u64,
        required: u64,
    },

    #[error("no channel statistics for species {species} at {distance_um} um; run `molcom calibrate` first")]
    MissingCalibration { species: String, distance_um: f64 },

    #[error("unknown message `{0}`")]
    UnknownMessage(String),

    #[error("time ordering violated: {later} s is not after {earlier} s")]
    Ordering { earlier: f64, later: f64 },

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
