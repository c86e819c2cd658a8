use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} is outside the domain of the distance generator")]
    Domain { point: Vec<f64> },

    #[error("time t = {t} is outside the admissible interval [{t_min}, {t_max}]")]
    TimeDomain { t: f64, t_min: f64, t_max: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure at {point:?}: {reason}")]
    Numerical { point: Vec<f64>, reason: String },

    #[error("integration left the domain at t = {t}; last valid state x = {last_x:?}, z = {last_z:?}")]
    Integration {
        t: f64,
        last_x: Vec<f64>,
        last_z: Vec<f64>,
    },

    #[error("trajectory diverged (non-finite state) at t = {t}")]
    Divergence { t: f64 },

    #[error("rate fit failed: {0}")]
    Fit(String),

    #[error("parameter mapping failed: {0}")]
    Mapping(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("family `{0}` has no closed-form rate function")]
    UnsupportedFamily(String),

    #[error("objective has no declared minimizer")]
    MissingMinimizer,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
