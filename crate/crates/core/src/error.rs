use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("background inversion undefined for rho = 0")]
    DegenerateMix,
    #[error("degenerate input: {reason}")]
    DegenerateInput { reason: &'static str },
    #[error("emitter and background intensities are both zero")]
    ZeroIntensity,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrelatorError {
    #[error("stream {channel} is not strictly increasing at index {index}")]
    Unsorted { channel: u8, index: usize },
    #[error("streams have different durations ({0} ns vs {1} ns)")]
    MismatchedDuration(f64, f64),
    #[error("invalid binning: {0}")]
    InvalidBinning(String),
    #[error("normalisation needs positive rates and duration")]
    ZeroRate,
    #[error("only {found} complete side peaks inside the window, need at least 2")]
    InsufficientPeaks { found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("invalid fit input: {0}")]
    InvalidInput(String),
    #[error("histogram carries no normalised values")]
    NotNormalized,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("refractive index must exceed 1, got {0}")]
    InvalidIndex(f64),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AcquisitionError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Correlator(#[from] CorrelatorError),
}
