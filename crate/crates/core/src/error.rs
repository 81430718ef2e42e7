use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QdmError {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The Liouvillian has more than one stationary state.
    #[error("non-unique steady state (null space dimension {dimension})")]
    NonUniqueSteadyState { dimension: usize },

    /// The Liouvillian has no trace-carrying null vector.
    #[error("no steady state found (smallest singular value {smallest:.3e})")]
    NoSteadyState { smallest: f64 },

    /// A measurement record has zero variance and cannot be normalized.
    #[error("degenerate record: zero variance")]
    DegenerateRecord,

    /// A record is too short for the requested number of lags.
    #[error("record too short: {len} outcomes for max lag {max_lag}")]
    RecordTooShort { len: usize, max_lag: usize },

    /// No significant peak rises above the spectrum's noise floor.
    #[error("featureless spectrum: peak prominence {prominence:.3e} below floor {floor:.3e}")]
    FeaturelessSpectrum { prominence: f64, floor: f64 },

    /// Levenberg-Marquardt did not meet its tolerance within the iteration cap.
    #[error("fit did not converge after {iterations} iterations (residual {residual:.3e}, damping {lambda:.3e})")]
    FitNonConvergence {
        iterations: usize,
        residual: f64,
        lambda: f64,
    },

    /// A text document (scene, config) failed to parse.
    #[error("{}{message}", line_prefix(*line))]
    Parse { line: usize, message: String },

    /// Pixels missing from a result set handed to map assembly.
    #[error("missing pixels: {0:?}")]
    MissingPixels(Vec<(usize, usize)>),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for QdmError {
    fn from(e: std::io::Error) -> Self {
        QdmError::Io(e.to_string())
    }
}

fn line_prefix(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!("line {line}: ")
    }
}

pub type Result<T> = std::result::Result<T, QdmError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(QdmError::Domain(msg.into()))
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        domain(format!("{name} must be finite, got {value}"))
    }
}
