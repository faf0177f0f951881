//! Statistics over phase trajectories: increment correlations, differential
//! phase variances, and the warm start for parameter learning.
//!
//! Sample statistics respect the trajectory guard so filter edge artifacts
//! stay out. Bandpass-extracted trajectories keep only the fraction
//! `B / Fs` of the single-sample increment variance (the increment spectrum
//! of a random walk is white), so one-sample statistics on such data say
//! little about the walk; the lag-based estimators below recover the
//! parameters from longer differences where the surviving variance grows
//! linearly again.

use ndarray::{Array1, Array2};

use crate::comb::{ElectroOpticNoiseParams, PhaseTrajectories};
use crate::em::rank2_project;
use crate::{Error, Result};

/// Pearson correlation matrix over a set of comb lines.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub line_indices: Vec<i32>,
    pub values: Array2<f64>,
}

impl CorrelationMatrix {
    /// CSV rendering: header row of line indices, then one row per line
    /// with its index in the first column.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("line_index");
        for m in &self.line_indices {
            write!(out, ",{m}").expect("string write cannot fail");
        }
        out.push('\n');
        for (i, m) in self.line_indices.iter().enumerate() {
            write!(out, "{m}").expect("string write cannot fail");
            for j in 0..self.line_indices.len() {
                write!(out, ",{}", self.values[[i, j]]).expect("string write cannot fail");
            }
            out.push('\n');
        }
        out
    }
}

/// Per-line scalar curve, such as differential phase variances.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceCurve {
    pub line_indices: Vec<i32>,
    pub values: Array1<f64>,
}

impl VarianceCurve {
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("line_index,variance\n");
        for (m, v) in self.line_indices.iter().zip(self.values.iter()) {
            writeln!(out, "{m},{v}").expect("string write cannot fail");
        }
        out
    }
}

/// Converts a covariance matrix into a correlation matrix.
///
/// # Errors
///
/// Any nonpositive diagonal entry makes the normalization undefined; the
/// offending line index (position when no indices are given) is reported.
pub fn correlation_from_covariance(
    cov: &Array2<f64>,
    line_indices: &[i32],
) -> Result<CorrelationMatrix> {
    let n = cov.nrows();
    if cov.ncols() != n || line_indices.len() != n {
        return Err(Error::DimensionMismatch {
            context: "covariance vs line indices",
            expected: line_indices.len(),
            got: n,
        });
    }
    for (i, &m) in line_indices.iter().enumerate() {
        if !(cov[[i, i]] > 0.0) {
            return Err(Error::ZeroVarianceLine { line_index: m });
        }
    }
    let mut values = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            values[[i, j]] = cov[[i, j]] / (cov[[i, i]] * cov[[j, j]]).sqrt();
        }
    }
    Ok(CorrelationMatrix { line_indices: line_indices.to_vec(), values })
}

/// Mean-removed covariance of the lag-`lag` phase differences
/// `phi[k + lag] - phi[k]` over the guarded interior.
pub fn lag_increment_covariance(traj: &PhaseTrajectories, lag: usize) -> Result<Array2<f64>> {
    let k_total = traj.num_samples();
    let g = traj.guard;
    if lag == 0 {
        return Err(Error::InvalidParameter("lag must be positive".into()));
    }
    let interior = k_total.saturating_sub(2 * g);
    if interior < lag + 2 {
        return Err(Error::InvalidParameter(format!(
            "interior of {interior} samples supports no lag-{lag} differences"
        )));
    }
    let m_total = traj.num_lines();
    let n = interior - lag;
    let mut mean = Array1::<f64>::zeros(m_total);
    for k in g..g + n {
        for j in 0..m_total {
            mean[j] += traj.phases[[k + lag, j]] - traj.phases[[k, j]];
        }
    }
    mean /= n as f64;
    let mut cov = Array2::<f64>::zeros((m_total, m_total));
    let mut d = Array1::<f64>::zeros(m_total);
    for k in g..g + n {
        for j in 0..m_total {
            d[j] = traj.phases[[k + lag, j]] - traj.phases[[k, j]] - mean[j];
        }
        for i in 0..m_total {
            let di = d[i];
            for j in i..m_total {
                cov[[i, j]] += di * d[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..m_total {
        for j in i..m_total {
            let v = cov[[i, j]] / denom;
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    Ok(cov)
}

/// Correlation of single-sample phase increments between all line pairs.
pub fn sample_increment_correlation(traj: &PhaseTrajectories) -> Result<CorrelationMatrix> {
    let cov = lag_increment_covariance(traj, 1)?;
    correlation_from_covariance(&cov, &traj.line_indices)
}

/// Expected lag-`lag` increment variance of a brick-wall bandlimited unit
/// random walk, in samples of per-step increment variance.
///
/// A walk lowpassed to `|f| < B / 2` retains
/// `I(L) = integral over |nu| < nu_B of (sin(pi nu L) / sin(pi nu))^2 dnu`
/// of its lag-`L` increment variance, where `nu_B = B / (2 Fs)`. For
/// `L >> Fs / B` this approaches the tail form `L - 2 Fs / (pi^2 B)`; the
/// integral is evaluated numerically so shorter lags are exact too.
pub fn bandlimited_lag_factor(lag: usize, bandwidth_hz: f64, sample_rate: f64) -> Result<f64> {
    if lag == 0 {
        return Err(Error::InvalidParameter("lag must be positive".into()));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sample rate must be positive, got {sample_rate}"
        )));
    }
    let nu_b = bandwidth_hz / (2.0 * sample_rate);
    if !(nu_b > 0.0 && nu_b <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "bandwidth {bandwidth_hz} must lie in (0, sample rate]"
        )));
    }
    let l = lag as f64;
    let g = |nu: f64| -> f64 {
        if nu == 0.0 {
            return l * l;
        }
        let r = (std::f64::consts::PI * nu * l).sin() / (std::f64::consts::PI * nu).sin();
        r * r
    };
    // Simpson over [0, nu_B], doubled; the integrand oscillates with period
    // 1 / lag in nu, far coarser than this grid for any realistic lag
    let n = 16_384usize;
    let h = nu_b / n as f64;
    let mut acc = g(0.0) + g(nu_b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(i as f64 * h);
    }
    Ok(2.0 * acc * h / 3.0)
}

/// Initial electro-optic parameters from bandpass-extracted trajectories.
///
/// The lag-`lag` increment covariance of a brick-wall filtered random walk
/// is `Q * I(lag)` with `I` the [`bandlimited_lag_factor`]: the band
/// removes the walk spectrum above `B / 2`, which costs roughly
/// `2 Fs / (pi^2 B)` samples worth of increment variance at usable lags.
/// Dividing by `I(lag)` and projecting onto the rank-2 family gives
/// parameters accurate to the sampling noise of the lag statistic, close
/// enough for EM to refine.
///
/// Extraction noise inflates the diagonal and is diluted by the
/// projection; with many lines the residual bias is around a percent.
/// [`warm_start_params_with_noise`] removes it when the measurement noise
/// level is known.
pub fn warm_start_params(
    traj: &PhaseTrajectories,
    lag: usize,
    bandwidth_hz: f64,
) -> Result<ElectroOpticNoiseParams> {
    warm_start(traj, lag, bandwidth_hz, None)
}

/// [`warm_start_params`] with the extraction-noise bias subtracted.
///
/// White measurement noise of variance `meas_var` lands on the extracted
/// phase of line `m` as an in-band disturbance of variance
/// `2 meas_var B / (Fs a_m^2)`; its lag increment variance, which inflates
/// the diagonal of the lag covariance, is removed before projection.
pub fn warm_start_params_with_noise(
    traj: &PhaseTrajectories,
    lag: usize,
    bandwidth_hz: f64,
    meas_var: f64,
    amplitudes: &Array1<f64>,
) -> Result<ElectroOpticNoiseParams> {
    if !(meas_var.is_finite() && meas_var >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "measurement variance must be nonnegative, got {meas_var}"
        )));
    }
    if amplitudes.len() != traj.num_lines() {
        return Err(Error::DimensionMismatch {
            context: "amplitudes vs trajectory lines",
            expected: traj.num_lines(),
            got: amplitudes.len(),
        });
    }
    if amplitudes.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
        return Err(Error::InvalidParameter(
            "noise correction needs positive line amplitudes".into(),
        ));
    }
    warm_start(traj, lag, bandwidth_hz, Some((meas_var, amplitudes)))
}

fn warm_start(
    traj: &PhaseTrajectories,
    lag: usize,
    bandwidth_hz: f64,
    noise: Option<(f64, &Array1<f64>)>,
) -> Result<ElectroOpticNoiseParams> {
    if !(bandwidth_hz.is_finite() && bandwidth_hz > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bandwidth must be positive, got {bandwidth_hz}"
        )));
    }
    let eff = bandlimited_lag_factor(lag, bandwidth_hz, traj.sample_rate)?;
    if eff < 0.5 * lag as f64 {
        return Err(Error::InvalidParameter(format!(
            "lag {lag} keeps only {eff:.1} samples of increment variance through a \
             {bandwidth_hz:.3e} Hz band; use a lag well above Fs / B"
        )));
    }
    let mut cov = lag_increment_covariance(traj, lag)?;
    if let Some((meas_var, amps)) = noise {
        let nu_b = bandwidth_hz / (2.0 * traj.sample_rate);
        // flat in-band noise decorrelates over 1 / (2 nu_B) samples; its
        // lag increment variance is 2 sigma_e^2 (1 - sinc(2 pi nu_B lag))
        let x = 2.0 * std::f64::consts::PI * nu_b * lag as f64;
        let shape = 1.0 - x.sin() / x;
        for (i, &a) in amps.iter().enumerate() {
            let sigma_e2 = 2.0 * meas_var * bandwidth_hz / (traj.sample_rate * a * a);
            cov[[i, i]] -= 2.0 * sigma_e2 * shape;
        }
    }
    let scaled = cov / eff;
    rank2_project(&scaled, &traj.line_indices)
}

/// Phases relative to a reference line, same shape and ordering as the
/// input; the reference column becomes identically zero.
pub fn differential_phases(
    traj: &PhaseTrajectories,
    reference_line: i32,
) -> Result<PhaseTrajectories> {
    let r = traj
        .position_of(reference_line)
        .ok_or(Error::MissingReferenceLine(reference_line))?;
    let mut phases = traj.phases.clone();
    let reference = traj.phases.column(r).to_owned();
    for k in 0..traj.num_samples() {
        let base = reference[k];
        for j in 0..traj.num_lines() {
            phases[[k, j]] -= base;
        }
    }
    PhaseTrajectories::new(phases, traj.sample_rate, traj.line_indices.clone(), traj.guard)
}

/// Mean-removed per-line variance over the guarded interior.
pub fn empirical_variance_curve(traj: &PhaseTrajectories) -> Result<VarianceCurve> {
    let g = traj.guard;
    let k_total = traj.num_samples();
    let n = k_total - 2 * g;
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "interior of {n} samples has no variance"
        )));
    }
    let m_total = traj.num_lines();
    let mut values = Array1::<f64>::zeros(m_total);
    for j in 0..m_total {
        let col = traj.phases.column(j);
        let mut mean = 0.0;
        for k in g..k_total - g {
            mean += col[k];
        }
        mean /= n as f64;
        let mut acc = 0.0;
        for k in g..k_total - g {
            acc += (col[k] - mean).powi(2);
        }
        values[j] = acc / (n - 1) as f64;
    }
    Ok(VarianceCurve { line_indices: traj.line_indices.clone(), values })
}

/// Frobenius and elementwise-maximum distances between two matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixError {
    pub frobenius: f64,
    pub max_abs: f64,
}

pub fn matrix_error(a: &Array2<f64>, b: &Array2<f64>) -> Result<MatrixError> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "matrix error operands",
            expected: a.nrows() * a.ncols(),
            got: b.nrows() * b.ncols(),
        });
    }
    let mut fro = 0.0;
    let mut max_abs = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = (x - y).abs();
        fro += d * d;
        max_abs = max_abs.max(d);
    }
    Ok(MatrixError { frobenius: fro.sqrt(), max_abs })
}
