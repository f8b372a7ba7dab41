//! Crate-wide error type.

/// Errors produced by the calibration and analysis routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside its physical domain (negative temperature,
    /// zero gain, threshold outside (0, 1), ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed input data; `line` is 1-based within the offending text.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Frequency grids are incompatible or a lookup falls outside the
    /// tabulated span.
    #[error("frequency grid error: {0}")]
    Grid(String),

    /// A calibration solve hit a singular or near-singular system.
    #[error("singular system at {freq_hz} Hz: {msg}")]
    Singular { freq_hz: f64, msg: String },

    /// The transmission-root choice could not be resolved.
    #[error("phase ambiguity resolving transmission root at {0:?} Hz")]
    RootAmbiguity(Vec<f64>),

    /// A fit has no unique solution (e.g. zero temperature span).
    #[error("underdetermined fit: {0}")]
    Underdetermined(String),

    /// The noise source failed its qualification inequality.
    #[error("source qualification failed for emitting port {emitting_port}: {msg}")]
    Qualification { emitting_port: u8, msg: String },

    /// A simulated instrument could not complete a request.
    #[error("instrument error: {0}")]
    Instrument(String),

    /// Replaying a calibration report did not reproduce its stored results.
    #[error("replay mismatch: {0}")]
    Replay(String),
}

/// Crate-wide result alias.
pub type Result<V> = std::result::Result<V, Error>;
