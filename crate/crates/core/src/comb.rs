//! Multi-line beat-signal model: comb geometry, phase random walks, and
//! synthetic photocurrent records.
//!
//! The photocurrent is modeled as a sum of sinusoids, one per comb line pair,
//! with slowly drifting phases and additive white detection noise:
//!
//! ```text
//! y[k] = sum_m a_m * sin(dw_m * Ts * k + phi_m[k]) + n[k],   n[k] ~ N(0, sigma_sn^2)
//! phi_m[k] = phi_m[k-1] + q_m[k-1]
//! ```
//!
//! For an electro-optically generated comb every line phase is a combination
//! of two elementary random walks, a common carrier walk and a repetition-rate
//! walk scaled by the line index:
//!
//! ```text
//! phi_m[k] = phi_c[k] + m * phi_rf[k]
//! ```
//!
//! so the per-sample increment covariance has rank at most two:
//! `Q[i][j] = sigma_c^2 + i * j * sigma_rf^2`.
//!
//! # Example
//!
//! ```
//! use combtrack_core::comb::{
//!     average_snr_db, synthesize_photocurrent, generate_wiener_phases, CombSpec,
//!     ElectroOpticNoiseParams,
//! };
//!
//! let spec = CombSpec::uniform_grid(3.6e9, 40e6, 2, &[1.0; 5], 10e9).unwrap();
//! let noise = ElectroOpticNoiseParams::new(1e-9, 1e-11).unwrap();
//! let phases = generate_wiener_phases(&noise, spec.line_indices(), 1000, 10e9, 7).unwrap();
//! let record = synthesize_photocurrent(&spec, phases, 1e-3, 7).unwrap();
//! assert_eq!(record.samples.len(), 1000);
//! assert!(average_snr_db(&spec, 1e-3) > 20.0);
//! ```

use ndarray::{Array1, Array2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg;
use crate::{Error, Result};

/// Seed tag mixed into the user seed for the photocurrent noise stream, so
/// the same record seed can drive both phase and measurement-noise draws
/// without correlation.
const MEAS_NOISE_SEED_TAG: u64 = 0x9e3779b97f4a7c15;

/// Static description of the comb line set entering the photodetector.
///
/// Frequencies are relative beat frequencies `dw_m` (rad/s) between signal
/// and local-oscillator lines; they must be strictly increasing and resolvable
/// below the Nyquist frequency of the configured sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct CombSpec {
    line_indices: Vec<i32>,
    amplitudes: Array1<f64>,
    rel_angular_freqs: Array1<f64>,
    sample_rate: f64,
}

impl CombSpec {
    /// Builds a spec from explicit per-line data.
    ///
    /// # Errors
    ///
    /// Rejects mismatched lengths, non-finite or negative amplitudes,
    /// non-increasing frequencies, and lines at or above Nyquist.
    pub fn new(
        line_indices: Vec<i32>,
        amplitudes: Vec<f64>,
        rel_angular_freqs: Vec<f64>,
        sample_rate: f64,
    ) -> Result<Self> {
        if line_indices.is_empty() {
            return Err(Error::InvalidParameter("comb must have at least one line".into()));
        }
        if amplitudes.len() != line_indices.len() {
            return Err(Error::DimensionMismatch {
                context: "amplitudes vs line indices",
                expected: line_indices.len(),
                got: amplitudes.len(),
            });
        }
        if rel_angular_freqs.len() != line_indices.len() {
            return Err(Error::DimensionMismatch {
                context: "frequencies vs line indices",
                expected: line_indices.len(),
                got: rel_angular_freqs.len(),
            });
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        for &a in &amplitudes {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "line amplitudes must be finite and nonnegative, got {a}"
                )));
            }
        }
        for w in rel_angular_freqs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidParameter(
                    "relative frequencies must be strictly increasing".into(),
                ));
            }
        }
        for &w in &rel_angular_freqs {
            let f = w.abs() / (2.0 * std::f64::consts::PI);
            if !w.is_finite() || f >= sample_rate / 2.0 {
                return Err(Error::InvalidParameter(format!(
                    "line at {f:.3e} Hz is not below Nyquist ({:.3e} Hz)",
                    sample_rate / 2.0
                )));
            }
        }
        Ok(Self {
            line_indices,
            amplitudes: Array1::from_vec(amplitudes),
            rel_angular_freqs: Array1::from_vec(rel_angular_freqs),
            sample_rate,
        })
    }

    /// Builds a uniformly spaced comb with indices `-half_count..=half_count`.
    ///
    /// Line `m` sits at `center_hz + m * spacing_hz`; `amplitudes` must have
    /// `2 * half_count + 1` entries.
    pub fn uniform_grid(
        center_hz: f64,
        spacing_hz: f64,
        half_count: usize,
        amplitudes: &[f64],
        sample_rate: f64,
    ) -> Result<Self> {
        let h = half_count as i32;
        let indices: Vec<i32> = (-h..=h).collect();
        let freqs: Vec<f64> = indices
            .iter()
            .map(|&m| 2.0 * std::f64::consts::PI * (center_hz + m as f64 * spacing_hz))
            .collect();
        Self::new(indices, amplitudes.to_vec(), freqs, sample_rate)
    }

    /// Reference grid geometry (center, spacing in Hz) scaled so the highest
    /// line of a `2 * half_count + 1` line comb stays at or below 90% of
    /// Nyquist for the given sample rate.
    ///
    /// The unscaled geometry is a 50 MHz grid centered at 90 spacings
    /// (4.5 GHz); when that does not fit, both shrink by a common factor and
    /// the spacing snaps down to a whole megahertz. The snap keeps every
    /// line on an exact DFT bin for records of 10^4 n samples at round
    /// sample rates, so full-record transforms see no cross-line leakage.
    pub fn scaled_grid(sample_rate: f64, half_count: usize) -> (f64, f64) {
        const SPACING: f64 = 50e6;
        const CENTER_SPACINGS: f64 = 90.0;
        let fmax = (CENTER_SPACINGS + half_count as f64) * SPACING;
        let s = (0.45 * sample_rate / fmax).min(1.0);
        let snapped = (s * SPACING / 1e6).floor() * 1e6;
        if snapped >= 1e6 {
            (CENTER_SPACINGS * snapped, snapped)
        } else {
            (CENTER_SPACINGS * s * SPACING, s * SPACING)
        }
    }

    pub fn num_lines(&self) -> usize {
        self.line_indices.len()
    }

    pub fn line_indices(&self) -> &[i32] {
        &self.line_indices
    }

    pub fn amplitudes(&self) -> &Array1<f64> {
        &self.amplitudes
    }

    /// Relative angular frequencies `dw_m` in rad/s.
    pub fn rel_angular_freqs(&self) -> &Array1<f64> {
        &self.rel_angular_freqs
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Deterministic phase argument `dw_m * Ts * k` of line `i` at sample `k`.
    pub(crate) fn carrier_angle(&self, i: usize, k: usize) -> f64 {
        self.rel_angular_freqs[i] * (k as f64 / self.sample_rate)
    }
}

/// Per-sample increment covariance of the line phases plus the detection
/// noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    process_cov: Array2<f64>,
    meas_var: f64,
}

impl NoiseModel {
    /// Validates symmetry and positive semidefiniteness (eigenvalues no more
    /// negative than `-1e-12 * trace`) before accepting the covariance.
    pub fn new(process_cov: Array2<f64>, meas_var: f64) -> Result<Self> {
        if process_cov.nrows() != process_cov.ncols() {
            return Err(Error::DimensionMismatch {
                context: "process covariance must be square",
                expected: process_cov.nrows(),
                got: process_cov.ncols(),
            });
        }
        if !(meas_var.is_finite() && meas_var >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "measurement variance must be finite and nonnegative, got {meas_var}"
            )));
        }
        let mut sym = process_cov.clone();
        linalg::symmetrize(&mut sym);
        let trace: f64 = (0..sym.nrows()).map(|i| sym[[i, i]]).sum();
        let min_eig = linalg::eigenvalues(&sym)
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-12 * trace.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveSemidefinite {
                context: "process covariance",
                min_eig,
            });
        }
        Ok(Self { process_cov: sym, meas_var })
    }

    pub fn process_cov(&self) -> &Array2<f64> {
        &self.process_cov
    }

    pub fn meas_var(&self) -> f64 {
        self.meas_var
    }

    pub fn dim(&self) -> usize {
        self.process_cov.nrows()
    }
}

/// Two-parameter electro-optic comb noise description: carrier and
/// repetition-rate (RF) random-walk increment variances, rad^2 per sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectroOpticNoiseParams {
    pub sigma_c2: f64,
    pub sigma_rf2: f64,
}

impl ElectroOpticNoiseParams {
    pub fn new(sigma_c2: f64, sigma_rf2: f64) -> Result<Self> {
        if !(sigma_c2.is_finite() && sigma_c2 >= 0.0) || !(sigma_rf2.is_finite() && sigma_rf2 >= 0.0)
        {
            return Err(Error::InvalidParameter(format!(
                "noise variances must be finite and nonnegative, got ({sigma_c2}, {sigma_rf2})"
            )));
        }
        Ok(Self { sigma_c2, sigma_rf2 })
    }

    /// Full process covariance `Q[i][j] = sigma_c^2 + i * j * sigma_rf^2`
    /// over the given line indices.
    pub fn process_cov(&self, line_indices: &[i32]) -> Array2<f64> {
        let n = line_indices.len();
        Array2::from_shape_fn((n, n), |(i, j)| {
            self.sigma_c2
                + line_indices[i] as f64 * line_indices[j] as f64 * self.sigma_rf2
        })
    }

    /// Bundles the structured covariance with a measurement variance.
    pub fn to_noise_model(&self, line_indices: &[i32], meas_var: f64) -> Result<NoiseModel> {
        NoiseModel::new(self.process_cov(line_indices), meas_var)
    }
}

/// Time-indexed phase trajectories for a set of comb lines.
///
/// Rows are samples, columns are lines (ordered as `line_indices`). `guard`
/// marks how many samples at each end carry edge artifacts from filtering and
/// should be excluded from statistics; it is zero for synthetic truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrajectories {
    pub phases: Array2<f64>,
    pub sample_rate: f64,
    pub line_indices: Vec<i32>,
    pub guard: usize,
}

impl PhaseTrajectories {
    pub fn new(
        phases: Array2<f64>,
        sample_rate: f64,
        line_indices: Vec<i32>,
        guard: usize,
    ) -> Result<Self> {
        if line_indices.is_empty() || phases.ncols() != line_indices.len() {
            return Err(Error::DimensionMismatch {
                context: "phase columns vs line indices",
                expected: line_indices.len(),
                got: phases.ncols(),
            });
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if 2 * guard >= phases.nrows() {
            return Err(Error::InvalidParameter(format!(
                "guard {guard} leaves no interior samples in a {} sample record",
                phases.nrows()
            )));
        }
        if phases.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("phase trajectories"));
        }
        Ok(Self { phases, sample_rate, line_indices, guard })
    }

    pub fn num_samples(&self) -> usize {
        self.phases.nrows()
    }

    pub fn num_lines(&self) -> usize {
        self.phases.ncols()
    }

    /// Position of a line index within the column ordering.
    pub fn position_of(&self, line_index: i32) -> Option<usize> {
        self.line_indices.iter().position(|&m| m == line_index)
    }
}

/// A sampled photocurrent record, optionally carrying the generating truth.
#[derive(Debug, Clone)]
pub struct SignalRecord {
    pub samples: Array1<f64>,
    pub sample_rate: f64,
    pub truth: Option<PhaseTrajectories>,
    pub seed: Option<u64>,
}

/// Beat amplitude per line from detector responsivity and the optical powers
/// of the interfering lines: `a_m = 2 R sqrt(P_sig * P_lo)`.
///
/// # Errors
///
/// Negative powers or responsivity, or mismatched lengths.
pub fn amplitude_from_powers(
    responsivity: f64,
    p_sig: &[f64],
    p_lo: &[f64],
) -> Result<Array1<f64>> {
    if p_sig.len() != p_lo.len() {
        return Err(Error::DimensionMismatch {
            context: "signal vs LO power arrays",
            expected: p_sig.len(),
            got: p_lo.len(),
        });
    }
    if !(responsivity.is_finite() && responsivity >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "responsivity must be finite and nonnegative, got {responsivity}"
        )));
    }
    let mut out = Array1::zeros(p_sig.len());
    for (i, (&ps, &pl)) in p_sig.iter().zip(p_lo.iter()).enumerate() {
        if !(ps.is_finite() && ps >= 0.0) || !(pl.is_finite() && pl >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "optical powers must be finite and nonnegative, got ({ps}, {pl})"
            )));
        }
        out[i] = 2.0 * responsivity * (ps * pl).sqrt();
    }
    Ok(out)
}

/// Draws correlated Wiener phase trajectories for the electro-optic model.
///
/// All lines start at zero phase. Per sample, a carrier increment with
/// variance `sigma_c2` and an RF increment with variance `sigma_rf2` are
/// drawn (in that order) from a ChaCha stream seeded with `seed`, and line
/// `m` accumulates `carrier + m * rf`. The same seed always reproduces the
/// same trajectories bit for bit.
pub fn generate_wiener_phases(
    params: &ElectroOpticNoiseParams,
    line_indices: &[i32],
    num_samples: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<PhaseTrajectories> {
    if num_samples == 0 || line_indices.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one sample and one line".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sc = params.sigma_c2.sqrt();
    let srf = params.sigma_rf2.sqrt();
    let m = line_indices.len();
    let mut phases = Array2::<f64>::zeros((num_samples, m));
    let mut carrier = 0.0f64;
    let mut rf = 0.0f64;
    for k in 1..num_samples {
        let zc: f64 = rng.sample(StandardNormal);
        let zr: f64 = rng.sample(StandardNormal);
        carrier += sc * zc;
        rf += srf * zr;
        for (j, &mi) in line_indices.iter().enumerate() {
            phases[[k, j]] = carrier + mi as f64 * rf;
        }
    }
    PhaseTrajectories::new(phases, sample_rate, line_indices.to_vec(), 0)
}

/// Draws Wiener phase trajectories with an arbitrary increment covariance.
///
/// Generalizes [`generate_wiener_phases`] beyond the two-parameter
/// electro-optic structure: per sample an increment vector with covariance
/// `process_cov` is accumulated into every line. The matrix may be rank
/// deficient (the electro-optic family is rank two); a symmetric
/// eigendecomposition with clipped negatives supplies the factor.
pub fn generate_correlated_phases(
    process_cov: &Array2<f64>,
    line_indices: &[i32],
    num_samples: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<PhaseTrajectories> {
    let m = line_indices.len();
    if num_samples == 0 || m == 0 {
        return Err(Error::InvalidParameter(
            "need at least one sample and one line".into(),
        ));
    }
    if process_cov.nrows() != m || process_cov.ncols() != m {
        return Err(Error::DimensionMismatch {
            context: "process covariance vs line indices",
            expected: m,
            got: process_cov.nrows(),
        });
    }
    // validates symmetry and near-positive-semidefiniteness
    let model = NoiseModel::new(process_cov.clone(), 0.0)?;
    let (vals, vecs) = linalg::jacobi_eigh(model.process_cov());
    let mut factor = Array2::<f64>::zeros((m, m));
    for (j, &lam) in vals.iter().enumerate() {
        if lam <= 0.0 {
            continue;
        }
        let s = lam.sqrt();
        for i in 0..m {
            factor[[i, j]] = vecs[[i, j]] * s;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phases = Array2::<f64>::zeros((num_samples, m));
    let mut state = Array1::<f64>::zeros(m);
    let mut z = Array1::<f64>::zeros(m);
    for k in 1..num_samples {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for i in 0..m {
            let mut inc = 0.0;
            for j in 0..m {
                inc += factor[[i, j]] * z[j];
            }
            state[i] += inc;
        }
        for i in 0..m {
            phases[[k, i]] = state[i];
        }
    }
    PhaseTrajectories::new(phases, sample_rate, line_indices.to_vec(), 0)
}

/// The exact increment covariance implied by [`ElectroOpticNoiseParams`];
/// rank at most two by construction.
pub fn true_process_covariance(
    params: &ElectroOpticNoiseParams,
    line_indices: &[i32],
) -> Array2<f64> {
    params.process_cov(line_indices)
}

/// Synthesizes the photocurrent for given phase trajectories and additive
/// white Gaussian detection noise of variance `meas_var`.
///
/// The trajectories move into the returned record as ground truth. The noise
/// stream is derived from `seed` but decoupled from the phase stream, so the
/// same seed may be used for both stages.
pub fn synthesize_photocurrent(
    spec: &CombSpec,
    phases: PhaseTrajectories,
    meas_var: f64,
    seed: u64,
) -> Result<SignalRecord> {
    if phases.num_lines() != spec.num_lines() || phases.line_indices != spec.line_indices {
        return Err(Error::DimensionMismatch {
            context: "trajectory lines vs comb spec",
            expected: spec.num_lines(),
            got: phases.num_lines(),
        });
    }
    if !(meas_var.is_finite() && meas_var >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "measurement variance must be finite and nonnegative, got {meas_var}"
        )));
    }
    let k_total = phases.num_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ MEAS_NOISE_SEED_TAG);
    let sn = meas_var.sqrt();
    let amps = spec.amplitudes();
    let mut samples = Array1::<f64>::zeros(k_total);
    for k in 0..k_total {
        let mut y = 0.0;
        for i in 0..spec.num_lines() {
            y += amps[i] * (spec.carrier_angle(i, k) + phases.phases[[k, i]]).sin();
        }
        if meas_var > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            y += sn * z;
        }
        samples[k] = y;
    }
    Ok(SignalRecord {
        samples,
        sample_rate: spec.sample_rate(),
        truth: Some(phases),
        seed: Some(seed),
    })
}

/// Per-line SNR in dB: `10 log10(a_m^2 / (2 sigma_sn^2))`.
///
/// A zero measurement variance yields `+inf` for every line with nonzero
/// amplitude; a zero-amplitude line yields `-inf`.
pub fn per_line_snr_db(spec: &CombSpec, meas_var: f64) -> Array1<f64> {
    spec.amplitudes()
        .mapv(|a| 10.0 * (a * a / (2.0 * meas_var)).log10())
}

/// Mean of the per-line SNRs in dB.
pub fn average_snr_db(spec: &CombSpec, meas_var: f64) -> f64 {
    let v = per_line_snr_db(spec, meas_var);
    v.sum() / v.len() as f64
}

/// Measurement variance that makes [`average_snr_db`] hit `target_db`.
///
/// Closed form: the dB average is linear in `log10(sigma_sn^2)`.
pub fn meas_var_for_average_snr_db(spec: &CombSpec, target_db: f64) -> Result<f64> {
    let amps = spec.amplitudes();
    if amps.iter().any(|&a| a <= 0.0) {
        return Err(Error::InvalidParameter(
            "SNR target requires strictly positive amplitudes".into(),
        ));
    }
    let mean_log: f64 =
        amps.iter().map(|&a| (a * a / 2.0).log10()).sum::<f64>() / amps.len() as f64;
    Ok(10f64.powf(mean_log - target_db / 10.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use approx::assert_abs_diff_eq;

    fn five_line_spec() -> CombSpec {
        CombSpec::uniform_grid(2e8, 5e7, 2, &[1.0; 5], 1e9).unwrap()
    }

    #[test]
    fn amplitude_formula() {
        let a = amplitude_from_powers(0.8, &[1e-3, 4e-3], &[1e-2, 1e-2]).unwrap();
        assert_abs_diff_eq!(a[0], 2.0 * 0.8 * (1e-5f64).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], 2.0 * 0.8 * (4e-5f64).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn amplitude_zero_power_is_zero() {
        let a = amplitude_from_powers(1.0, &[0.0], &[1.0]).unwrap();
        assert_eq!(a[0], 0.0);
    }

    #[test]
    fn amplitude_rejects_negative_power() {
        assert!(amplitude_from_powers(1.0, &[-1e-3], &[1e-3]).is_err());
    }

    #[test]
    fn spec_rejects_line_at_nyquist() {
        let err = CombSpec::new(
            vec![0],
            vec![1.0],
            vec![2.0 * std::f64::consts::PI * 5e8],
            1e9,
        );
        assert!(err.is_err());
    }

    #[test]
    fn spec_rejects_unsorted_freqs() {
        let err = CombSpec::new(
            vec![0, 1],
            vec![1.0, 1.0],
            vec![2e8, 1e8],
            1e9,
        );
        assert!(err.is_err());
    }

    #[test]
    fn scaled_grid_fits_below_nyquist() {
        let (c, s) = CombSpec::scaled_grid(10e9, 24);
        assert_eq!((c, s), (3.51e9, 39e6));
        assert!(c + 24.0 * s <= 0.45 * 10e9 + 1.0);
        // spacing lands on exact bins for records of 10^4 n samples
        assert_eq!((s / 1e6).fract(), 0.0);
        // unconstrained case keeps the reference geometry
        let (c2, s2) = CombSpec::scaled_grid(20e9, 24);
        assert_eq!((c2, s2), (4.5e9, 50e6));
    }

    #[test]
    fn phases_start_at_zero_and_repeat_with_seed() {
        let p = ElectroOpticNoiseParams::new(1e-6, 1e-8).unwrap();
        let idx = [-2, -1, 0, 1, 2];
        let a = generate_wiener_phases(&p, &idx, 500, 1e9, 42).unwrap();
        let b = generate_wiener_phases(&p, &idx, 500, 1e9, 42).unwrap();
        let c = generate_wiener_phases(&p, &idx, 500, 1e9, 43).unwrap();
        assert!(a.phases.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(a.phases, b.phases);
        assert!(a.phases != c.phases);
    }

    #[test]
    fn increment_covariance_matches_truth_within_3se() {
        // Monte-Carlo oracle: sample covariance of increments vs the
        // closed-form Q, entrywise within 3 standard errors.
        let p = ElectroOpticNoiseParams::new(2e-6, 5e-8).unwrap();
        let idx = [-2, -1, 0, 1, 2];
        let k = 200_000usize;
        let t = generate_wiener_phases(&p, &idx, k, 1e9, 7).unwrap();
        let q = true_process_covariance(&p, &idx);
        let n = k - 1;
        let mut mean = vec![0.0; 5];
        for r in 1..k {
            for j in 0..5 {
                mean[j] += (t.phases[[r, j]] - t.phases[[r - 1, j]]) / n as f64;
            }
        }
        for i in 0..5 {
            for j in 0..5 {
                let mut s = 0.0;
                for r in 1..k {
                    let di = t.phases[[r, i]] - t.phases[[r - 1, i]] - mean[i];
                    let dj = t.phases[[r, j]] - t.phases[[r - 1, j]] - mean[j];
                    s += di * dj;
                }
                let est = s / (n - 1) as f64;
                let se = ((q[[i, i]] * q[[j, j]] + q[[i, j]] * q[[i, j]]) / n as f64).sqrt();
                assert!(
                    (est - q[[i, j]]).abs() <= 3.0 * se,
                    "entry ({i},{j}): est={est:.3e} true={:.3e} se={se:.3e}",
                    q[[i, j]]
                );
            }
        }
    }

    #[test]
    fn correlated_generator_reproduces_arbitrary_covariance() {
        // Monte-Carlo oracle for the general factorized path, including a
        // rank-deficient target (two equal columns).
        let q = ndarray::array![
            [4e-6, 1e-6, 4e-6],
            [1e-6, 2e-6, 1e-6],
            [4e-6, 1e-6, 4e-6]
        ];
        let idx = [-1, 0, 1];
        let k = 150_000usize;
        let t = generate_correlated_phases(&q, &idx, k, 1e9, 21).unwrap();
        assert!(t.phases.row(0).iter().all(|&v| v == 0.0));
        let n = k - 1;
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for r in 1..k {
                    let di = t.phases[[r, i]] - t.phases[[r - 1, i]];
                    let dj = t.phases[[r, j]] - t.phases[[r - 1, j]];
                    s += di * dj;
                }
                let est = s / n as f64;
                let se = ((q[[i, i]] * q[[j, j]] + q[[i, j]] * q[[i, j]]) / n as f64).sqrt();
                assert!(
                    (est - q[[i, j]]).abs() <= 4.0 * se,
                    "entry ({i},{j}): est={est:.3e} true={:.3e}",
                    q[[i, j]]
                );
            }
        }
        // columns 0 and 2 of the target are identical, so the walks agree
        // up to the clipped near-zero eigendirection
        for r in (0..k).step_by(1000) {
            assert_abs_diff_eq!(t.phases[[r, 0]], t.phases[[r, 2]], epsilon = 1e-6);
        }
        assert!(generate_correlated_phases(&q, &[0, 1], 100, 1e9, 1).is_err());
    }

    #[test]
    fn process_covariance_is_rank_two() {
        let p = ElectroOpticNoiseParams::new(1e-6, 1e-8).unwrap();
        let idx: Vec<i32> = (-10..=10).collect();
        let q = true_process_covariance(&p, &idx);
        let eigs = linalg::eigenvalues(&q);
        assert!(eigs[1] > 0.0);
        assert!(
            eigs[2].abs() <= 1e-12 * eigs[0],
            "third eigenvalue {:.3e} vs first {:.3e}",
            eigs[2],
            eigs[0]
        );
        assert!(eigs.iter().all(|&e| e >= -1e-12 * eigs[0]));
    }

    #[test]
    fn covariance_entries_closed_form() {
        let p = ElectroOpticNoiseParams::new(3e-6, 2e-8).unwrap();
        let idx = [-3, 0, 4];
        let q = true_process_covariance(&p, &idx);
        assert_abs_diff_eq!(q[[0, 2]], 3e-6 + (-3.0 * 4.0) * 2e-8, epsilon = 1e-20);
        assert_abs_diff_eq!(q[[1, 1]], 3e-6, epsilon = 1e-20);
    }

    #[test]
    fn noiseless_constant_phase_photocurrent_is_exact() {
        let spec = five_line_spec();
        let k = 256;
        let zero = PhaseTrajectories::new(
            Array2::zeros((k, 5)),
            spec.sample_rate(),
            spec.line_indices().to_vec(),
            0,
        )
        .unwrap();
        let rec = synthesize_photocurrent(&spec, zero, 0.0, 0).unwrap();
        for t in 0..k {
            let mut y = 0.0;
            for i in 0..5 {
                y += (spec.rel_angular_freqs()[i] * t as f64 / spec.sample_rate()).sin();
            }
            assert_abs_diff_eq!(rec.samples[t], y, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_amplitude_record_is_noise_with_requested_variance() {
        // chi-square oracle: sample variance of pure noise within 3 SE
        let spec = CombSpec::uniform_grid(2e8, 5e7, 2, &[0.0; 5], 1e9).unwrap();
        let k = 100_000;
        let zero = PhaseTrajectories::new(
            Array2::zeros((k, 5)),
            1e9,
            spec.line_indices().to_vec(),
            0,
        )
        .unwrap();
        let var = 0.25;
        let rec = synthesize_photocurrent(&spec, zero, var, 3).unwrap();
        let sample_var = rec.samples.mapv(|v| v * v).sum() / k as f64;
        let se = var * (2.0 / k as f64).sqrt();
        assert!((sample_var - var).abs() <= 3.0 * se, "sample var {sample_var}");
    }

    #[test]
    fn photocurrent_is_deterministic_per_seed() {
        let spec = five_line_spec();
        let p = ElectroOpticNoiseParams::new(1e-7, 1e-9).unwrap();
        let mk = |seed| {
            let t = generate_wiener_phases(&p, spec.line_indices(), 400, 1e9, seed).unwrap();
            synthesize_photocurrent(&spec, t, 1e-2, seed).unwrap().samples
        };
        assert_eq!(mk(9), mk(9));
        assert!(mk(9) != mk(10));
    }

    #[test]
    fn snr_formula_and_edge_cases() {
        let spec = five_line_spec();
        let v = per_line_snr_db(&spec, 0.5);
        for &s in v.iter() {
            assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12); // a=1: a^2/(2*0.5)=1
        }
        assert!(per_line_snr_db(&spec, 0.0).iter().all(|s| s.is_infinite() && *s > 0.0));
    }

    #[test]
    fn average_snr_round_trips_through_inverse() {
        let spec = five_line_spec();
        for target in [16.53, 23.2, 29.05] {
            let mv = meas_var_for_average_snr_db(&spec, target).unwrap();
            assert_abs_diff_eq!(average_snr_db(&spec, mv), target, epsilon = 1e-9);
        }
    }

    #[test]
    fn noise_model_rejects_indefinite_covariance() {
        let q = ndarray::array![[1.0, 2.0], [2.0, 1.0]];
        assert!(NoiseModel::new(q, 0.1).is_err());
    }

    #[test]
    fn guard_must_leave_interior() {
        let r = PhaseTrajectories::new(Array2::zeros((10, 1)), 1.0, vec![0], 5);
        assert!(r.is_err());
    }
}
