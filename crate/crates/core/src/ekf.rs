//! Extended Kalman filtering and RTS smoothing for phase random walks.
//!
//! The state is the vector of line phases. The transition is an identity
//! random walk (`x[k+1] = x[k] + w`, `w ~ N(0, Q)`), so prediction reduces
//! to adding `Q` to the covariance. The scalar measurement is the nonlinear
//! photocurrent sample
//!
//! ```text
//! h(x, k) = sum_m a_m sin(dw_m Ts k + x_m),
//! H_m(x, k) = a_m cos(dw_m Ts k + x_m)
//! ```
//!
//! linearized at the predicted mean. Updates use the Joseph form so the
//! covariance stays symmetric positive semidefinite under roundoff.
//!
//! Records are long (10^5 samples) and the state can hold dozens of lines,
//! so neither pass stores per-step covariance matrices. The forward pass
//! keeps means, variance diagonals, innovations and sparse covariance
//! checkpoints; the backward pass replays covariances segment by segment
//! from the checkpoints and accumulates the sufficient statistics needed by
//! parameter learning instead of materializing smoothed covariances.

use ndarray::{Array1, Array2, ArrayView1};

use crate::comb::{CombSpec, ElectroOpticNoiseParams, NoiseModel};
use crate::linalg;
use crate::{Error, Result};

/// Gaussian state belief, mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

impl GaussianBelief {
    pub fn new(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "belief covariance vs mean",
                expected: mean.len(),
                got: cov.nrows().max(cov.ncols()),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("belief"));
        }
        // the update kernel indexes the covariance as a contiguous slice
        let cov = if cov.is_standard_layout() {
            cov
        } else {
            cov.as_standard_layout().to_owned()
        };
        Ok(Self { mean, cov })
    }

    /// Zero-mean prior with variance matching a phase uniform on
    /// `[-pi, pi]`: suitable when nothing is known about the phases.
    pub fn diffuse(dim: usize) -> Self {
        let var = std::f64::consts::PI.powi(2) / 3.0;
        Self {
            mean: Array1::zeros(dim),
            cov: Array2::eye(dim) * var,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Scalar measurement of a vector state: value and Jacobian row at a given
/// sample index, linearized at a given state.
pub trait MeasurementModel {
    fn dim(&self) -> usize;

    /// Number of samples the model is defined for.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the Jacobian row into `jac` and returns `h(state, k)`.
    fn value_and_jacobian(&self, k: usize, state: &ArrayView1<f64>, jac: &mut Array1<f64>)
        -> f64;
}

/// Photocurrent measurement for a comb: sum of per-line sinusoids.
#[derive(Debug, Clone)]
pub struct CombMeasurement {
    amps: Array1<f64>,
    /// Per-line phase advance per sample, `dw_m / Fs`.
    dw_ts: Array1<f64>,
    len: usize,
}

impl CombMeasurement {
    pub fn new(spec: &CombSpec, len: usize) -> Self {
        let dw_ts = spec.rel_angular_freqs() / spec.sample_rate();
        Self { amps: spec.amplitudes().clone(), dw_ts, len }
    }
}

impl MeasurementModel for CombMeasurement {
    fn dim(&self) -> usize {
        self.amps.len()
    }

    fn len(&self) -> usize {
        self.len
    }

    fn value_and_jacobian(
        &self,
        k: usize,
        state: &ArrayView1<f64>,
        jac: &mut Array1<f64>,
    ) -> f64 {
        let mut h = 0.0;
        for i in 0..self.amps.len() {
            let theta = self.dw_ts[i] * k as f64 + state[i];
            let (sin, cos) = theta.sin_cos();
            h += self.amps[i] * sin;
            jac[i] = self.amps[i] * cos;
        }
        h
    }
}

/// Known time-varying linear measurement `h = rows[k] . x`; mainly for
/// validating the filter against closed-form Kalman recursions.
#[derive(Debug, Clone)]
pub struct LinearMeasurement {
    pub rows: Array2<f64>,
}

impl MeasurementModel for LinearMeasurement {
    fn dim(&self) -> usize {
        self.rows.ncols()
    }

    fn len(&self) -> usize {
        self.rows.nrows()
    }

    fn value_and_jacobian(
        &self,
        k: usize,
        state: &ArrayView1<f64>,
        jac: &mut Array1<f64>,
    ) -> f64 {
        jac.assign(&self.rows.row(k));
        self.rows.row(k).dot(state)
    }
}

/// Random-walk prediction: mean unchanged, covariance grows by `Q`.
pub fn predict(belief: &mut GaussianBelief, process_cov: &Array2<f64>) -> Result<()> {
    if process_cov.nrows() != belief.dim() || process_cov.ncols() != belief.dim() {
        return Err(Error::DimensionMismatch {
            context: "process covariance vs state",
            expected: belief.dim(),
            got: process_cov.nrows().max(process_cov.ncols()),
        });
    }
    belief.cov += process_cov;
    Ok(())
}

/// Joseph-form scalar update. Returns the innovation and its variance.
///
/// `h` and `jac` must be evaluated at the current (predicted) mean.
pub fn update(
    belief: &mut GaussianBelief,
    h: f64,
    jac: &Array1<f64>,
    y: f64,
    meas_var: f64,
    step: usize,
) -> Result<(f64, f64)> {
    let m = belief.dim();
    if jac.len() != m {
        return Err(Error::DimensionMismatch {
            context: "jacobian vs state",
            expected: m,
            got: jac.len(),
        });
    }
    let v = belief.cov.dot(jac);
    let s = jac.dot(&v) + meas_var;
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::DegenerateInnovation { step, value: s });
    }
    let e = y - h;
    let gain = &v / s;
    belief.mean.scaled_add(e, &gain);
    // P - K v' - v K' + S K K', equal to P - v v'/S but symmetric under
    // roundoff
    let p = belief.cov.as_slice_mut().expect("covariance is contiguous");
    for i in 0..m {
        for j in 0..m {
            p[i * m + j] += s * gain[i] * gain[j] - gain[i] * v[j] - v[i] * gain[j];
        }
    }
    linalg::symmetrize(&mut belief.cov);
    Ok((e, s))
}

#[derive(Debug, Clone)]
pub struct FilterOptions {
    /// Steps between stored covariance checkpoints used for smoother replay.
    pub checkpoint_interval: usize,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self { checkpoint_interval: 512 }
    }
}

/// Forward pass output. Covariances are kept as diagonals plus sparse
/// checkpoints; full matrices are reconstructed on demand during smoothing.
#[derive(Debug, Clone)]
pub struct FilterResult {
    /// Updated (posterior) means, one row per sample.
    pub means: Array2<f64>,
    /// Diagonal of the updated covariance per sample.
    pub var_diag: Array2<f64>,
    pub innovations: Array1<f64>,
    pub innovation_vars: Array1<f64>,
    /// Sum of per-sample innovation log-densities.
    pub loglik: f64,
    pub(crate) checkpoints: Vec<(usize, Array2<f64>)>,
}

impl FilterResult {
    pub fn num_samples(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }
}

/// Runs the extended Kalman filter over a record.
///
/// The prior belief stands in for the first predicted state: no process
/// noise is added before the first update, and `K` samples incur `K - 1`
/// transitions.
pub fn run_filter<M: MeasurementModel>(
    model: &M,
    y: &Array1<f64>,
    noise: &NoiseModel,
    prior: &GaussianBelief,
    opts: &FilterOptions,
) -> Result<FilterResult> {
    let k_total = y.len();
    let dim = model.dim();
    if k_total == 0 || model.len() < k_total {
        return Err(Error::InvalidParameter(format!(
            "measurement model covers {} samples, record has {k_total}",
            model.len()
        )));
    }
    if noise.dim() != dim || prior.dim() != dim {
        return Err(Error::DimensionMismatch {
            context: "noise model and prior vs measurement model",
            expected: dim,
            got: noise.dim().max(prior.dim()),
        });
    }
    if opts.checkpoint_interval == 0 {
        return Err(Error::InvalidParameter("checkpoint interval must be positive".into()));
    }
    let mut belief = prior.clone();
    let mut jac = Array1::zeros(dim);
    let mut means = Array2::zeros((k_total, dim));
    let mut var_diag = Array2::zeros((k_total, dim));
    let mut innovations = Array1::zeros(k_total);
    let mut innovation_vars = Array1::zeros(k_total);
    let mut checkpoints = Vec::with_capacity(k_total / opts.checkpoint_interval + 2);
    let mut loglik = 0.0;
    for k in 0..k_total {
        if k > 0 {
            predict(&mut belief, noise.process_cov())?;
        }
        let h = model.value_and_jacobian(k, &belief.mean.view(), &mut jac);
        let (e, s) = update(&mut belief, h, &jac, y[k], noise.meas_var(), k)?;
        loglik += -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + e * e / s);
        means.row_mut(k).assign(&belief.mean);
        for i in 0..dim {
            var_diag[[k, i]] = belief.cov[[i, i]];
        }
        innovations[k] = e;
        innovation_vars[k] = s;
        if k % opts.checkpoint_interval == 0 || k == k_total - 1 {
            checkpoints.push((k, belief.cov.clone()));
        }
    }
    if !loglik.is_finite() {
        return Err(Error::NonFinite("filter log-likelihood"));
    }
    Ok(FilterResult {
        means,
        var_diag,
        innovations,
        innovation_vars,
        loglik,
        checkpoints,
    })
}

#[derive(Debug, Clone, Default)]
pub struct SmootherOptions {
    /// Keep every smoothed covariance matrix. Only sensible for short
    /// records; the statistics needed by parameter learning are accumulated
    /// either way.
    pub store_covariances: bool,
}

/// Backward pass output with the accumulated expectations used by EM.
#[derive(Debug, Clone)]
pub struct SmootherResult {
    /// Smoothed means, one row per sample.
    pub means: Array2<f64>,
    /// Diagonal of the smoothed covariance per sample.
    pub var_diag: Array2<f64>,
    /// `sum_k E[(x[k+1] - x[k])(x[k+1] - x[k])'] | y]` over the `K - 1`
    /// transitions; dividing by `K - 1` gives the EM process-noise update.
    pub qstat_sum: Array2<f64>,
    /// `sum_k (y[k] - h(ms[k], k))^2` with `h` at the smoothed means.
    pub sum_resid2: f64,
    /// `sum_k H P H'` with both at the smoothed estimate; completes the EM
    /// measurement-variance update.
    pub sum_hph: f64,
    /// Full smoothed covariances when requested in [`SmootherOptions`].
    pub covariances: Option<Vec<Array2<f64>>>,
}

/// Per-step backward recursion state shared by the dense and structured
/// smoother paths.
struct BackwardAccum<'a, M: MeasurementModel> {
    model: &'a M,
    y: &'a Array1<f64>,
    means_s: Array2<f64>,
    var_diag: Array2<f64>,
    qstat_sum: Array2<f64>,
    sum_resid2: f64,
    sum_hph: f64,
    covariances: Option<Vec<Array2<f64>>>,
    jac: Array1<f64>,
}

impl<'a, M: MeasurementModel> BackwardAccum<'a, M> {
    fn new(model: &'a M, y: &'a Array1<f64>, dim: usize, store: bool) -> Self {
        let k_total = y.len();
        Self {
            model,
            y,
            means_s: Array2::zeros((k_total, dim)),
            var_diag: Array2::zeros((k_total, dim)),
            qstat_sum: Array2::zeros((dim, dim)),
            sum_resid2: 0.0,
            sum_hph: 0.0,
            covariances: if store { Some(vec![Array2::zeros((0, 0)); k_total]) } else { None },
            jac: Array1::zeros(dim),
        }
    }

    /// Records smoothed moments for step `k` once `means_s.row(k)` and `ps`
    /// are final.
    fn absorb(&mut self, k: usize, ps: &Array2<f64>) {
        let dim = ps.nrows();
        for i in 0..dim {
            self.var_diag[[k, i]] = ps[[i, i]];
        }
        let row = self.means_s.row(k).to_owned();
        let h = self.model.value_and_jacobian(k, &row.view(), &mut self.jac);
        let r = self.y[k] - h;
        self.sum_resid2 += r * r;
        self.sum_hph += self.jac.dot(&ps.dot(&self.jac));
        if let Some(cs) = self.covariances.as_mut() {
            cs[k] = ps.clone();
        }
    }

    /// Adds the transition `k -> k+1` expectation
    /// `d d' + Ps[k+1] + Ps[k] - C - C'` with `C = G Ps[k+1]`.
    fn add_transition(&mut self, k: usize, ps_k: &Array2<f64>, ps_next: &Array2<f64>, c: &Array2<f64>) {
        let dim = ps_k.nrows();
        for i in 0..dim {
            let di = self.means_s[[k + 1, i]] - self.means_s[[k, i]];
            for j in 0..dim {
                let dj = self.means_s[[k + 1, j]] - self.means_s[[k, j]];
                self.qstat_sum[[i, j]] +=
                    di * dj + ps_next[[i, j]] + ps_k[[i, j]] - c[[i, j]] - c[[j, i]];
            }
        }
    }

    fn finish(self) -> SmootherResult {
        SmootherResult {
            means: self.means_s,
            var_diag: self.var_diag,
            qstat_sum: self.qstat_sum,
            sum_resid2: self.sum_resid2,
            sum_hph: self.sum_hph,
            covariances: self.covariances,
        }
    }
}

/// Replays updated covariances for steps `start..=end` from the checkpoint
/// covariance at `start`, reusing the stored filter means for linearization.
fn replay_covariances<M: MeasurementModel>(
    model: &M,
    filt: &FilterResult,
    noise: &NoiseModel,
    start: usize,
    start_cov: &Array2<f64>,
    end: usize,
) -> Result<Vec<Array2<f64>>> {
    let dim = filt.dim();
    let mut jac = Array1::zeros(dim);
    let mut out = Vec::with_capacity(end - start + 1);
    out.push(start_cov.clone());
    let mut p = start_cov.clone();
    for k in start + 1..=end {
        p += noise.process_cov();
        // the original update linearized at the previous posterior mean
        let prev = filt.means.row(k - 1).to_owned();
        model.value_and_jacobian(k, &prev.view(), &mut jac);
        let v = p.dot(&jac);
        let s = jac.dot(&v) + noise.meas_var();
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::DegenerateInnovation { step: k, value: s });
        }
        let ps = p.as_slice_mut().expect("covariance is contiguous");
        for i in 0..dim {
            for j in 0..dim {
                ps[i * dim + j] -= v[i] * v[j] / s;
            }
        }
        linalg::symmetrize(&mut p);
        out.push(p.clone());
    }
    Ok(out)
}

/// Iterates checkpoint segments from the back of the record, handing each
/// segment's replayed covariances to `process(segment_start, covs)`.
fn backward_over_segments<M, F>(
    model: &M,
    filt: &FilterResult,
    noise: &NoiseModel,
    mut process: F,
) -> Result<()>
where
    M: MeasurementModel,
    F: FnMut(usize, &[Array2<f64>]) -> Result<()>,
{
    let cps = &filt.checkpoints;
    for j in (0..cps.len().saturating_sub(1)).rev() {
        let (start, ref cov) = cps[j];
        let end = cps[j + 1].0 - 1;
        let covs = replay_covariances(model, filt, noise, start, cov, end)?;
        process(start, &covs)?;
    }
    Ok(())
}

/// RTS smoother over a filtered record, dense process covariance.
///
/// With the identity transition the gain is `G = Pu (Pu + Q)^-1` and
///
/// ```text
/// ms[k] = mu[k] + G (ms[k+1] - mu[k])
/// Ps[k] = Pu[k] + G (Ps[k+1] - Pu[k] - Q) G'
/// ```
///
/// The lag-one covariance `C = G Ps[k+1]` feeds the transition statistics.
pub fn rts_smooth<M: MeasurementModel>(
    model: &M,
    y: &Array1<f64>,
    noise: &NoiseModel,
    filt: &FilterResult,
    opts: &SmootherOptions,
) -> Result<SmootherResult> {
    let k_total = filt.num_samples();
    let dim = filt.dim();
    if noise.dim() != dim || y.len() != k_total {
        return Err(Error::DimensionMismatch {
            context: "smoother inputs vs filter result",
            expected: dim,
            got: noise.dim(),
        });
    }
    let mut acc = BackwardAccum::new(model, y, dim, opts.store_covariances);
    let last_cov = &filt.checkpoints.last().expect("filter stores final checkpoint").1;
    acc.means_s.row_mut(k_total - 1).assign(&filt.means.row(k_total - 1));
    let mut ps = last_cov.clone();
    acc.absorb(k_total - 1, &ps);
    backward_over_segments(model, filt, noise, |start, covs| {
        let top = start + covs.len() - 1;
        let hi = if top == k_total - 1 { top - 1 } else { top };
        for k in (start..=hi).rev() {
            let pu = &covs[k - start];
            let mut pp = pu + noise.process_cov();
            let chol = linalg::cholesky(&pp, k)?;
            // G = Pu Pp^-1, via Pp X = Pu then transpose
            let g = linalg::cholesky_solve_mat(&chol, pu).t().to_owned();
            // reuse pp as Ps[k+1] - Pp
            pp.zip_mut_with(&ps, |a, b| *a = *b - *a);
            let c = g.dot(&ps);
            let ps_k = {
                let mut t = g.dot(&pp).dot(&g.t());
                t += pu;
                linalg::symmetrize(&mut t);
                t
            };
            let prev = filt.means.row(k).to_owned();
            let next = acc.means_s.row(k + 1).to_owned();
            let mut mean_k = prev.clone();
            mean_k += &g.dot(&(&next - &prev));
            acc.means_s.row_mut(k).assign(&mean_k);
            acc.absorb(k, &ps_k);
            acc.add_transition(k, &ps_k, &ps, &c);
            ps = ps_k;
        }
        Ok(())
    })?;
    Ok(acc.finish())
}

/// RTS smoother specialized to the two-parameter electro-optic process
/// noise `Q = U D U'` with `U = [1 | m]`.
///
/// The gain never materializes: `G = I - W Z'` with `Z = Pp^-1 U` and
/// `W = U D`, so every step costs `O(dim^2)` plus one Cholesky.
pub fn rts_smooth_rank2<M: MeasurementModel>(
    model: &M,
    y: &Array1<f64>,
    noise_params: &ElectroOpticNoiseParams,
    line_indices: &[i32],
    meas_var: f64,
    filt: &FilterResult,
    opts: &SmootherOptions,
) -> Result<SmootherResult> {
    let k_total = filt.num_samples();
    let dim = filt.dim();
    if line_indices.len() != dim || y.len() != k_total {
        return Err(Error::DimensionMismatch {
            context: "smoother inputs vs filter result",
            expected: dim,
            got: line_indices.len(),
        });
    }
    let noise = NoiseModel::new(noise_params.process_cov(line_indices), meas_var)?;
    // factor columns with nonzero variance; empty means Q = 0 and G = I
    let mut cols: Vec<(f64, Vec<f64>)> = Vec::new();
    if noise_params.sigma_c2 > 0.0 {
        cols.push((noise_params.sigma_c2, vec![1.0; dim]));
    }
    if noise_params.sigma_rf2 > 0.0 {
        cols.push((noise_params.sigma_rf2, line_indices.iter().map(|&m| m as f64).collect()));
    }
    let r = cols.len();
    let u = Array2::from_shape_fn((dim, r), |(i, j)| cols[j].1[i]);
    let w = Array2::from_shape_fn((dim, r), |(i, j)| cols[j].1[i] * cols[j].0);

    let mut acc = BackwardAccum::new(model, y, dim, opts.store_covariances);
    let last_cov = &filt.checkpoints.last().expect("filter stores final checkpoint").1;
    acc.means_s.row_mut(k_total - 1).assign(&filt.means.row(k_total - 1));
    let mut ps = last_cov.clone();
    acc.absorb(k_total - 1, &ps);
    backward_over_segments(model, filt, &noise, |start, covs| {
        let top = start + covs.len() - 1;
        let hi = if top == k_total - 1 { top - 1 } else { top };
        for k in (start..=hi).rev() {
            let pu = &covs[k - start];
            let pp = pu + noise.process_cov();
            let (mean_k, ps_k, c) = if r == 0 {
                // no process noise: smoothed state is carried back unchanged
                (acc.means_s.row(k + 1).to_owned(), ps.clone(), ps.clone())
            } else {
                let chol = linalg::cholesky(&pp, k)?;
                let z = linalg::cholesky_solve_mat(&chol, &u);
                // G x = x - W (Z' x)
                let apply_g = |x: &Array1<f64>| -> Array1<f64> {
                    let t = z.t().dot(x);
                    x - &w.dot(&t)
                };
                let prev = filt.means.row(k).to_owned();
                let diff = &acc.means_s.row(k + 1).to_owned() - &prev;
                let mean_k = &prev + &apply_g(&diff);

                // Ps[k] = Pu + G D G' with D = Ps[k+1] - Pp:
                // D - W(Z'D) - (W(Z'D))' + W (Z'D Z) W'
                let d = &ps - &pp;
                let zd = z.t().dot(&d);
                let zdz = zd.dot(&z);
                let wzd = w.dot(&zd);
                let mut ps_k = &d - &wzd;
                ps_k -= &wzd.t();
                ps_k += &w.dot(&zdz).dot(&w.t());
                ps_k += pu;
                linalg::symmetrize(&mut ps_k);

                // C = G Ps[k+1] = Ps[k+1] - W (Z' Ps[k+1])
                let zp = z.t().dot(&ps);
                let c = &ps - &w.dot(&zp);
                (mean_k, ps_k, c)
            };
            acc.means_s.row_mut(k).assign(&mean_k);
            acc.absorb(k, &ps_k);
            acc.add_transition(k, &ps_k, &ps, &c);
            ps = ps_k;
        }
        Ok(())
    })?;
    Ok(acc.finish())
}
