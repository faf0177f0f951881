//! Conventional per-line phase extraction by bandpass filtering.
//!
//! Each comb line is isolated with an ideal (brick-wall) band of the
//! full-record spectrum; the positive-frequency part, doubled, gives the
//! analytic signal whose unwrapped angle minus the carrier ramp is the
//! line phase. This is the standard reference method: it needs no noise
//! model, but everything of the phase process outside the band is lost,
//! including most of the sample-to-sample increment structure when the
//! band is narrow relative to the sample rate.

use ndarray::{Array1, Array2};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::comb::{CombSpec, PhaseTrajectories};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOptions {
    /// Full width of the per-line brick-wall band.
    pub bandwidth_hz: f64,
    /// Fraction of the record length marked as guard samples at each end;
    /// the circular filtering wraps edge transients around the record.
    pub guard_fraction: f64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self { bandwidth_hz: 30e6, guard_fraction: 0.01 }
    }
}

impl BaselineOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth_hz
            )));
        }
        if !(self.guard_fraction >= 0.0 && self.guard_fraction < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "guard fraction must be in [0, 0.5), got {}",
                self.guard_fraction
            )));
        }
        Ok(())
    }
}

/// Extracts every line phase of `spec` from a record.
///
/// Bands must fit strictly inside (0, Nyquist) and must not overlap
/// between neighboring lines. The returned trajectories carry a guard of
/// `floor(guard_fraction * K)` samples.
pub fn run_conventional(
    samples: &Array1<f64>,
    spec: &CombSpec,
    opts: &BaselineOptions,
) -> Result<PhaseTrajectories> {
    opts.validate()?;
    let k_total = samples.len();
    if k_total < 2 {
        return Err(Error::InvalidParameter(format!(
            "record of {k_total} samples is too short for phase extraction"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("baseline input record"));
    }
    let fs = spec.sample_rate();
    let freqs: Vec<f64> = spec
        .rel_angular_freqs()
        .iter()
        .map(|w| w / (2.0 * std::f64::consts::PI))
        .collect();
    for pair in freqs.windows(2) {
        if pair[1] - pair[0] < opts.bandwidth_hz {
            return Err(Error::InvalidParameter(format!(
                "lines {:.3e} and {:.3e} Hz are closer than the {:.3e} Hz band",
                pair[0], pair[1], opts.bandwidth_hz
            )));
        }
    }
    let planner = &mut FftPlanner::new();
    let forward = planner.plan_fft_forward(k_total);
    let inverse = planner.plan_fft_inverse(k_total);
    let mut spectrum: Vec<Complex<f64>> =
        samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    forward.process(&mut spectrum);
    let mut phases = Array2::<f64>::zeros((k_total, freqs.len()));
    let mut band = vec![Complex::new(0.0, 0.0); k_total];
    for (j, &f) in freqs.iter().enumerate() {
        let z = analytic_band(&spectrum, &inverse, &mut band, fs, f, opts.bandwidth_hz)?;
        let ramp = 2.0 * std::f64::consts::PI * f / fs;
        unwrap_into(z, ramp, phases.column_mut(j))?;
    }
    let guard = (opts.guard_fraction * k_total as f64).floor() as usize;
    PhaseTrajectories::new(phases, fs, spec.line_indices().to_vec(), guard)
}

/// Phase of a single line; convenience wrapper used when only one band is
/// of interest.
pub fn single_line_phase(
    samples: &Array1<f64>,
    sample_rate: f64,
    center_hz: f64,
    opts: &BaselineOptions,
) -> Result<Array1<f64>> {
    let spec = CombSpec::new(
        vec![0],
        vec![1.0],
        vec![2.0 * std::f64::consts::PI * center_hz],
        sample_rate,
    )?;
    let traj = run_conventional(samples, &spec, opts)?;
    Ok(traj.phases.column(0).to_owned())
}

/// Doubled positive-band inverse transform: the analytic signal of the
/// line at `center_hz`.
fn analytic_band<'a>(
    spectrum: &[Complex<f64>],
    inverse: &std::sync::Arc<dyn rustfft::Fft<f64>>,
    band: &'a mut [Complex<f64>],
    fs: f64,
    center_hz: f64,
    bandwidth_hz: f64,
) -> Result<&'a [Complex<f64>]> {
    let k_total = spectrum.len();
    let df = fs / k_total as f64;
    let lo_hz = center_hz - bandwidth_hz / 2.0;
    let hi_hz = center_hz + bandwidth_hz / 2.0;
    if !(lo_hz > 0.0) || !(hi_hz < fs / 2.0) {
        return Err(Error::BandOutsideNyquist { lo: lo_hz, hi: hi_hz, nyquist: fs / 2.0 });
    }
    let lo = (lo_hz / df).ceil() as usize;
    let hi = (hi_hz / df).floor() as usize;
    band.fill(Complex::new(0.0, 0.0));
    for i in lo..=hi {
        band[i] = 2.0 * spectrum[i];
    }
    inverse.process(band);
    let scale = 1.0 / k_total as f64;
    for v in band.iter_mut() {
        *v *= scale;
    }
    Ok(band)
}

/// Unwrapped angle minus the carrier ramp, written into one trajectory
/// column. A sine of phase `phi` has analytic-signal angle
/// `ramp * k + phi - pi/2`.
///
/// The detrended increments are accumulated directly instead of building
/// the full unwrapped angle (tens of thousands of radians) and subtracting
/// the ramp afterwards; keeping the running sum small avoids an
/// accumulated rounding error that grows with record length.
fn unwrap_into(
    z: &[Complex<f64>],
    ramp: f64,
    mut out: ndarray::ArrayViewMut1<'_, f64>,
) -> Result<()> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut prev_arg = 0.0;
    let mut first = 0.0;
    let mut acc = 0.0;
    for (k, v) in z.iter().enumerate() {
        if v.re == 0.0 && v.im == 0.0 {
            return Err(Error::ZeroMagnitudeSample { index: k });
        }
        let arg = v.im.atan2(v.re);
        if k == 0 {
            first = arg;
        } else {
            let mut d = arg - prev_arg;
            while d > std::f64::consts::PI {
                d -= two_pi;
            }
            while d <= -std::f64::consts::PI {
                d += two_pi;
            }
            acc += d - ramp;
        }
        prev_arg = arg;
        out[k] = first + acc + std::f64::consts::PI / 2.0;
    }
    Ok(())
}
