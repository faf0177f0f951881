//! Joint phase tracking and noise-source identification for multi-line beat signals.
//!
//! A photodetected beat note between two optical frequency combs is a sum of
//! sinusoids, one per comb line, whose phases drift as correlated random walks:
//!
//! ```text
//! y[k] = sum_m a_m * sin(dw_m * Ts * k + phi_m[k]) + n[k]
//! ```
//!
//! This crate simulates such records, tracks every line phase jointly with an
//! extended Kalman filter and Rauch-Tung-Striebel smoother, learns the phase
//! random-walk covariance and the detection noise floor by
//! expectation-maximization, and compares the result against the conventional
//! bandpass-plus-analytic-signal method.
//!
//! Modules follow the processing chain:
//!
//! * [`comb`] - signal model, synthetic phase and photocurrent generation
//! * [`spectral`] - Welch periodogram and comb line detection
//! * [`ekf`] - extended Kalman filter and smoother over the line phases
//! * [`em`] - expectation-maximization for the noise parameters
//! * [`baseline`] - conventional bandpass + analytic-signal phase extraction
//! * [`analysis`] - correlation matrices and differential phase variance curves

pub mod analysis;
pub mod baseline;
pub mod comb;
pub mod ekf;
pub mod em;
mod error;
pub(crate) mod linalg;
pub mod spectral;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
