use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("workspace exceeded: spot at ({x:.4}, {y:.4}) mm is beyond the ±{limit:.3} mm clamp")]
    WorkspaceExceeded { x: f64, y: f64, limit: f64 },
    #[error("current {requested:.6} A saturates the driver; clamped to {clamped:.6} A")]
    Saturation { requested: f64, clamped: f64 },
    #[error("no pixel above the detection threshold")]
    NoSpot,
    #[error("spot at ({x:.4}, {y:.4}) mm lies outside the camera field of view")]
    OutOfFrame { x: f64, y: f64 },
    #[error("sequencing error: {0}")]
    Sequencing(String),
    #[error("busy: {0}")]
    Busy(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category used in CLI output and wire errors.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Geometry(_) => "geometry",
            Error::Validation(_) => "validation",
            Error::WorkspaceExceeded { .. } => "workspace",
            Error::Saturation { .. } => "saturation",
            Error::NoSpot => "no_spot",
            Error::OutOfFrame { .. } => "out_of_frame",
            Error::Sequencing(_) => "sequencing",
            Error::Busy(_) => "busy",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code for the category. Zero is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) => 2,
            Error::Validation(_) | Error::Sequencing(_) => 3,
            Error::Domain(_) | Error::Geometry(_) => 4,
            Error::WorkspaceExceeded { .. } | Error::Saturation { .. } => 5,
            Error::NoSpot | Error::OutOfFrame { .. } => 6,
            Error::Busy(_) => 7,
            Error::Io(_) => 8,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub(crate) fn ensure_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be finite, got {v}")))
    }
}
