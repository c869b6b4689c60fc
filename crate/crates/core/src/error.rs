use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The pose does not lie on a constant-curvature arc of the configured length.
    #[error("unreachable pose: position residual {position_mm:.3e} mm, rotation residual {rotation_rad:.3e} rad")]
    Unreachable { position_mm: f64, rotation_rad: f64 },

    #[error("calibration failed, unreached targets: {}", .unreached.join(", "))]
    Calibration { unreached: Vec<String> },

    #[error("interpolant fit failed: {0}")]
    Fit(String),

    #[error("trajectory error: {0}")]
    Trajectory(String),

    #[error("state error: {0}")]
    State(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("no path between start and goal: they lie in different connected components")]
    Disconnected,

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
