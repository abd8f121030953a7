use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("anti-binding mirror term exceeds trap term at z = {z} m: modified trap frequency is imaginary")]
    ImaginaryFrequency { z: f64 },

    #[error("integrator state became non-finite at t = {t} s (q = {q}, v = {v})")]
    NonFiniteState { t: f64, q: f64, v: f64 },

    #[error("thinning majorant violated: rate {rate} exceeds rate_max {rate_max} at t = {t} s")]
    MajorantViolated { t: f64, rate: f64, rate_max: f64 },

    #[error("input too short: need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("invalid overlap {0}: must be in [0, 0.9]")]
    InvalidOverlap(f64),

    #[error("insufficient data for lock quality: window {window} s < 10 x integration time {integration_time} s")]
    InsufficientLockData { window: f64, integration_time: f64 },

    #[error("fringe lock lost (actuator saturated) during a {duration} s run")]
    LockLost { duration: f64 },

    #[error("slope sequence is not alternating at record {index}")]
    NotAlternating { index: usize },

    #[error("need at least 3 alternating records, got {0}")]
    TooFewRecords(usize),

    #[error("noise floor is not positive: {0}")]
    NonPositiveFloor(f64),

    #[error("scan point {index} rejected: {reason}")]
    ScanPointRejected { index: usize, reason: String },

    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
