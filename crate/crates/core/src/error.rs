use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coil geometry: turn {turn} has non-positive inner dimension ({detail})")]
    Geometry { turn: usize, detail: String },

    #[error("forward integration diverged at arc coordinate s = {arc:.6e} m")]
    Divergence { arc: f64 },

    #[error("current {current:.6} A on coil {coil} exceeds its limit {limit:.6} A")]
    CurrentLimit { coil: usize, current: f64, limit: f64 },

    #[error("configuration: {0}")]
    Config(String),

    #[error("phantom map: {0}")]
    Phantom(String),

    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
