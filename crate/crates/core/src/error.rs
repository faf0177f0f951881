use thiserror::Error;

/// Errors produced by model construction, estimation, and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs that must share a length or shape do not.
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A parameter is outside its admissible domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A covariance matrix failed a positive-semidefiniteness check.
    #[error("matrix is not positive semidefinite: {context} (min eigenvalue {min_eig:.3e})")]
    NotPositiveSemidefinite { context: &'static str, min_eig: f64 },

    /// Cholesky factorization hit a non-positive pivot.
    #[error("singular predicted covariance at step {step}; increase the process noise or the prior covariance")]
    SingularPredictedCovariance { step: usize },

    /// The innovation variance collapsed; the measurement model is degenerate.
    #[error("innovation variance {value:.3e} is not positive at step {step}; model degenerate")]
    DegenerateInnovation { step: usize, value: f64 },

    /// Fewer spectral peaks than requested.
    #[error("expected {expected} spectral lines but found only {found} local maxima")]
    TooFewPeaks { expected: usize, found: usize },

    /// A bandpass band falls outside the representable frequency range.
    #[error("band [{lo:.3e}, {hi:.3e}] Hz exceeds the range (0, {nyquist:.3e}) Hz")]
    BandOutsideNyquist { lo: f64, hi: f64, nyquist: f64 },

    /// The analytic signal vanished, so its phase is undefined.
    #[error("analytic signal has zero magnitude at sample {index}; phase undefined")]
    ZeroMagnitudeSample { index: usize },

    /// A statistic that must be finite was not.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// A trajectory column has no variance, so it cannot be normalized.
    #[error("line {line_index} has zero increment variance; correlation undefined")]
    ZeroVarianceLine { line_index: i32 },

    /// The requested reference line is not part of the trajectory set.
    #[error("reference line index {0} not present in trajectories")]
    MissingReferenceLine(i32),
}
