//! Expectation-maximization learning of the noise parameters.
//!
//! Each iteration runs the extended Kalman filter and smoother at the
//! current parameters (E step), then replaces the process covariance with
//! the mean smoothed increment outer product and the measurement variance
//! with the mean residual expectation (M step):
//!
//! ```text
//! Q       <- qstat_sum / (K - 1)
//! sigma^2 <- (sum_resid2 + sum_hph) / K
//! ```
//!
//! Under the rank-2 structure the updated `Q` is projected onto
//! `sigma_C^2 + m_i m_j sigma_RF^2` before the next E step, which also
//! unlocks the structured smoother path. The likelihood of every evaluated
//! iterate is recorded; the returned parameters are always ones whose
//! likelihood appears in the trace.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::comb::{ElectroOpticNoiseParams, NoiseModel};
use crate::ekf::{
    run_filter, rts_smooth, rts_smooth_rank2, FilterOptions, GaussianBelief, MeasurementModel,
    SmootherOptions, SmootherResult,
};
use crate::{linalg, Error, Result};

/// Structural constraint applied to the process covariance after each
/// M step.
#[derive(Debug, Clone, PartialEq)]
pub enum QStructure {
    /// Any symmetric positive semidefinite matrix.
    Full,
    /// `Q_ij = sigma_C^2 + m_i m_j sigma_RF^2` over these line indices.
    Rank2 { line_indices: Vec<i32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop once `|loglik - previous| < tol * |previous|`.
    pub rel_loglik_tol: f64,
    pub structure: QStructure,
    /// Eigenvalue floor enforced on full-structure updates.
    pub psd_floor: f64,
    /// Passed through to the forward filter.
    pub checkpoint_interval: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            rel_loglik_tol: 1e-6,
            structure: QStructure::Full,
            psd_floor: 0.0,
            checkpoint_interval: 512,
        }
    }
}

/// One evaluated iterate: the likelihood of the parameters the E step ran
/// with, plus scalar summaries of those parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmIteration {
    pub loglik: f64,
    pub sigma2: f64,
    pub q_trace: f64,
    /// Largest eigenvalue of the process covariance.
    pub q_eig1: f64,
    /// Second largest eigenvalue; under the rank-2 structure the remaining
    /// spectrum is zero.
    pub q_eig2: f64,
}

/// Iteration history of one EM run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmTrace {
    pub iterations: Vec<EmIteration>,
}

impl EmTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn last(&self) -> Option<&EmIteration> {
        self.iterations.last()
    }

    /// Renders the trace as CSV with a fixed header. Floats use the
    /// shortest representation that round-trips, so reruns of the same
    /// inputs produce byte-identical output.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loglik,sigma2,q_trace,q_eig1,q_eig2\n");
        for (i, it) in self.iterations.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                i, it.loglik, it.sigma2, it.q_trace, it.q_eig1, it.q_eig2
            )
            .expect("string write cannot fail");
        }
        out
    }
}

/// Fitted parameters plus diagnostics.
#[derive(Debug, Clone)]
pub struct EmResult {
    pub noise: NoiseModel,
    /// The structured parameters when [`QStructure::Rank2`] was requested.
    pub electro_optic: Option<ElectroOpticNoiseParams>,
    pub trace: EmTrace,
    /// Whether the relative likelihood tolerance was met within the
    /// iteration budget.
    pub converged: bool,
    /// E-step output at the returned parameters; its means are the final
    /// smoothed phase trajectories.
    pub final_smoother: SmootherResult,
}

/// Raw M-step update from smoothed sufficient statistics.
///
/// Returns the unconstrained `(Q, sigma^2)` pair; callers apply structure.
pub fn m_step(stats: &SmootherResult) -> Result<(Array2<f64>, f64)> {
    let k = stats.means.nrows();
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "M step needs at least 2 samples, got {k}"
        )));
    }
    let mut q = &stats.qstat_sum / (k - 1) as f64;
    linalg::symmetrize(&mut q);
    let sigma2 = (stats.sum_resid2 + stats.sum_hph) / k as f64;
    if !sigma2.is_finite() || q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("M-step update"));
    }
    Ok((q, sigma2))
}

/// Least-squares projection of a symmetric matrix onto the rank-2 family
/// `sigma_C^2 + m_i m_j sigma_RF^2`, with both coefficients clamped to be
/// nonnegative.
///
/// For index sets symmetric around zero the normal equations decouple into
/// `sigma_C^2 = sum(Q) / M^2` and `sigma_RF^2 = sum(m_i m_j Q_ij) /
/// (sum m^2)^2`; the general 2x2 solve below reduces to that.
pub fn rank2_project(q: &Array2<f64>, line_indices: &[i32]) -> Result<ElectroOpticNoiseParams> {
    let m_total = line_indices.len();
    if q.nrows() != m_total || q.ncols() != m_total {
        return Err(Error::DimensionMismatch {
            context: "covariance vs line indices",
            expected: m_total,
            got: q.nrows(),
        });
    }
    let sm: f64 = line_indices.iter().map(|&m| m as f64).sum();
    let sm2: f64 = line_indices.iter().map(|&m| (m as f64).powi(2)).sum();
    // Gram matrix of the basis {ones, m m'} under the Frobenius product
    let g11 = (m_total * m_total) as f64;
    let g12 = sm * sm;
    let g22 = sm2 * sm2;
    let det = g11 * g22 - g12 * g12;
    if !(det > 1e-12 * g11 * g22.max(1.0)) {
        return Err(Error::InvalidParameter(
            "rank-2 projection needs at least two distinct line indices".into(),
        ));
    }
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for (i, &mi) in line_indices.iter().enumerate() {
        for (j, &mj) in line_indices.iter().enumerate() {
            let v = q[[i, j]];
            b1 += v;
            b2 += (mi as f64) * (mj as f64) * v;
        }
    }
    let sigma_c2 = ((g22 * b1 - g12 * b2) / det).max(0.0);
    let sigma_rf2 = ((g11 * b2 - g12 * b1) / det).max(0.0);
    ElectroOpticNoiseParams::new(sigma_c2, sigma_rf2)
}

/// Clips the eigenvalues of a symmetric matrix at `floor` and
/// reconstructs; keeps full-structure updates positive semidefinite.
fn clip_psd(q: &Array2<f64>, floor: f64) -> Array2<f64> {
    let (vals, vecs) = linalg::jacobi_eigh(q);
    if vals.iter().all(|&v| v >= floor) {
        return q.clone();
    }
    let n = q.nrows();
    let mut out = Array2::<f64>::zeros((n, n));
    for (idx, &v) in vals.iter().enumerate() {
        let lam = v.max(floor);
        if lam == 0.0 {
            continue;
        }
        let u = vecs.column(idx);
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += lam * u[i] * u[j];
            }
        }
    }
    linalg::symmetrize(&mut out);
    out
}

enum Theta {
    Full(NoiseModel),
    Rank2 { params: ElectroOpticNoiseParams, meas_var: f64 },
}

/// Fits the process covariance and measurement variance by EM.
///
/// `init` seeds the iteration; under the rank-2 structure the initial
/// matrix is projected onto the structured family first, so the constraint
/// holds for every evaluated iterate. Stops when the relative likelihood
/// change drops below tolerance or after `max_iters` evaluations.
///
/// Monotonicity caveat: the E step linearizes the measurement around
/// filtered estimates, so the likelihood can in principle dip by amounts
/// comparable to the linearization error. With phase increments far inside
/// the linear range of the sinusoidal measurement this is not observed
/// above solver noise.
pub fn run_em<M: MeasurementModel>(
    model: &M,
    y: &ndarray::Array1<f64>,
    init: &NoiseModel,
    prior: &GaussianBelief,
    opts: &EmOptions,
) -> Result<EmResult> {
    if opts.max_iters == 0 {
        return Err(Error::InvalidParameter("EM needs at least one iteration".into()));
    }
    if !(opts.rel_loglik_tol.is_finite() && opts.rel_loglik_tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "relative tolerance must be positive, got {}",
            opts.rel_loglik_tol
        )));
    }
    if init.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "initial noise model vs measurement model",
            expected: model.dim(),
            got: init.dim(),
        });
    }
    let mut theta = match &opts.structure {
        QStructure::Full => Theta::Full(init.clone()),
        QStructure::Rank2 { line_indices } => {
            if line_indices.len() != model.dim() {
                return Err(Error::DimensionMismatch {
                    context: "line indices vs measurement model",
                    expected: model.dim(),
                    got: line_indices.len(),
                });
            }
            Theta::Rank2 {
                params: rank2_project(init.process_cov(), line_indices)?,
                meas_var: init.meas_var(),
            }
        }
    };
    let filter_opts = FilterOptions { checkpoint_interval: opts.checkpoint_interval };
    let smoother_opts = SmootherOptions::default();
    let mut trace = EmTrace::default();
    let mut converged = false;
    // the parameters belonging to the latest trace row; an exhausted budget
    // never returns the trailing unevaluated M-step update
    let mut evaluated: Option<(NoiseModel, Option<ElectroOpticNoiseParams>, SmootherResult)> = None;
    for _ in 0..opts.max_iters {
        let (noise, params_opt, stats, loglik) = match &theta {
            Theta::Full(noise) => {
                let filt = run_filter(model, y, noise, prior, &filter_opts)?;
                let ll = filt.loglik;
                let stats = rts_smooth(model, y, noise, &filt, &smoother_opts)?;
                (noise.clone(), None, stats, ll)
            }
            Theta::Rank2 { params, meas_var } => {
                let line_indices = match &opts.structure {
                    QStructure::Rank2 { line_indices } => line_indices,
                    QStructure::Full => unreachable!("theta and structure agree"),
                };
                let noise = params.to_noise_model(line_indices, *meas_var)?;
                let filt = run_filter(model, y, &noise, prior, &filter_opts)?;
                let ll = filt.loglik;
                let stats = rts_smooth_rank2(
                    model,
                    y,
                    params,
                    line_indices,
                    *meas_var,
                    &filt,
                    &smoother_opts,
                )?;
                (noise, Some(*params), stats, ll)
            }
        };
        let eigs = linalg::eigenvalues(noise.process_cov());
        let dim = noise.dim();
        trace.iterations.push(EmIteration {
            loglik,
            sigma2: noise.meas_var(),
            q_trace: noise.process_cov().diag().sum(),
            q_eig1: eigs[0],
            q_eig2: if dim > 1 { eigs[1] } else { 0.0 },
        });
        let n = trace.len();
        let stop = n >= 2 && {
            let prev = trace.iterations[n - 2].loglik;
            (loglik - prev).abs() < opts.rel_loglik_tol * prev.abs()
        };
        if stop {
            evaluated = Some((noise, params_opt, stats));
            converged = true;
            break;
        }
        let (q_new, sigma2_new) = m_step(&stats)?;
        evaluated = Some((noise, params_opt, stats));
        theta = match &opts.structure {
            QStructure::Full => {
                Theta::Full(NoiseModel::new(clip_psd(&q_new, opts.psd_floor), sigma2_new)?)
            }
            QStructure::Rank2 { line_indices } => Theta::Rank2 {
                params: rank2_project(&q_new, line_indices)?,
                meas_var: sigma2_new,
            },
        };
    }
    let (noise, electro_optic, final_smoother) = evaluated.expect("at least one iteration ran");
    Ok(EmResult { noise, electro_optic, trace, converged, final_smoother })
}
