//! Spectral estimation: Welch periodograms, comb line detection, and
//! frequency refinement.
//!
//! Line detection runs in three stages. A Welch periodogram gives coarse
//! peaks with sub-bin frequency accuracy from quadratic interpolation of
//! log power. When the lines form a uniform grid, a least-squares fit of
//! center and spacing averages the per-line errors down. A zoomed DFT then
//! refines individual lines to sub-Hz accuracy, which matters because a
//! residual spacing error turns into a linear phase drift across the record.
//!
//! Amplitudes come from integrating the one-sided power density over the
//! peak's main lobe (7 bins with the Hann window), which equals `a^2 / 2`
//! for an isolated sinusoid regardless of where it falls within a bin.

use ndarray::Array1;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::{Error, Result};

/// Welch estimation parameters. The defaults (Hann window, 50% overlap,
/// segment length an eighth of the record rounded down to a power of two)
/// fit multi-thousand-sample beat records.
#[derive(Debug, Clone, Default)]
pub struct WelchOptions {
    /// Segment length; picked automatically when `None`.
    pub segment_len: Option<usize>,
}

impl WelchOptions {
    fn resolve_segment(&self, num_samples: usize) -> Result<usize> {
        let n = match self.segment_len {
            Some(n) => n,
            None => {
                let target = (num_samples / 8).max(64);
                let mut p = 1usize;
                while p * 2 <= target {
                    p *= 2;
                }
                p
            }
        };
        if n < 8 || n > num_samples {
            return Err(Error::InvalidParameter(format!(
                "segment length {n} not in [8, {num_samples}]"
            )));
        }
        Ok(n)
    }
}

/// One-sided Welch power spectral density.
#[derive(Debug, Clone)]
pub struct Periodogram {
    /// Bin center frequencies, `0..=Fs/2`.
    pub freqs: Array1<f64>,
    /// Density in signal units squared per Hz.
    pub density: Array1<f64>,
    /// Bin spacing `Fs / segment_len`.
    pub resolution_hz: f64,
    pub num_segments: usize,
    pub sample_rate: f64,
}

impl Periodogram {
    /// White-noise variance implied by the median density bin.
    ///
    /// The median is robust against the small fraction of bins occupied by
    /// comb lines; a Gamma-median factor undoes the bias of taking a median
    /// of `num_segments`-averaged exponential bins.
    pub fn noise_floor_variance(&self) -> f64 {
        let mut v: Vec<f64> = self.density.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        let k = self.num_segments as f64;
        // median of Gamma(k, mean/k) is close to mean * (k - 1/3) / k
        let unbias = k / (k - 1.0 / 3.0);
        median * unbias * self.sample_rate / 2.0
    }
}

/// Welch PSD with a periodic Hann window and 50% overlap.
///
/// Scaling is `2 / (Fs * sum(w^2) * n_seg)` so an isolated tone of
/// amplitude `a` integrates to `a^2 / 2` over its lobe; the DC and Nyquist
/// bins are not doubled.
pub fn periodogram(
    samples: &Array1<f64>,
    sample_rate: f64,
    opts: &WelchOptions,
) -> Result<Periodogram> {
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sample rate must be positive, got {sample_rate}"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("periodogram input"));
    }
    let n = opts.resolve_segment(samples.len())?;
    let hop = n / 2;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let half = n / 2;
    let mut acc = vec![0.0f64; half + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut num_segments = 0usize;
    let mut start = 0usize;
    while start + n <= samples.len() {
        for i in 0..n {
            buf[i] = Complex::new(samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (i, a) in acc.iter_mut().enumerate() {
            *a += buf[i].norm_sqr();
        }
        num_segments += 1;
        start += hop;
    }
    debug_assert!(num_segments > 0, "segment resolution guarantees one segment");
    let scale = 2.0 / (sample_rate * wss * num_segments as f64);
    let mut density = Array1::from_vec(acc) * scale;
    density[0] *= 0.5;
    if n % 2 == 0 {
        density[half] *= 0.5;
    }
    let resolution_hz = sample_rate / n as f64;
    let freqs = Array1::from_shape_fn(half + 1, |i| i as f64 * resolution_hz);
    Ok(Periodogram { freqs, density, resolution_hz, num_segments, sample_rate })
}

/// How [`detect_lines`] decides which peaks are comb lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineSelection {
    /// Exactly this many strongest peaks, error if fewer exist.
    Count(usize),
    /// Every peak at least this many dB above the noise floor.
    ProminenceDb(f64),
}

/// A detected spectral line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineEstimate {
    pub freq_hz: f64,
    pub amplitude: f64,
    /// Integrated line power, `amplitude^2 / 2`.
    pub power: f64,
}

/// Half-width in bins of the integration window used for line power; covers
/// the Hann main lobe plus interpolation slack.
const LOBE_HALF_BINS: usize = 3;

/// Finds line peaks in a periodogram and estimates frequency and amplitude.
///
/// Frequencies use quadratic interpolation of log power over the peak bin
/// and its neighbors; amplitudes integrate the density over the main lobe.
/// Results are sorted by frequency.
pub fn detect_lines(pg: &Periodogram, selection: LineSelection) -> Result<Vec<LineEstimate>> {
    let d = &pg.density;
    let n = d.len();
    if n < 2 * LOBE_HALF_BINS + 3 {
        return Err(Error::InvalidParameter("periodogram too short for line detection".into()));
    }
    let floor_density = pg.noise_floor_variance() / (pg.sample_rate / 2.0);
    let mut peaks: Vec<(usize, f64)> = Vec::new();
    for i in LOBE_HALF_BINS..n - LOBE_HALF_BINS {
        if d[i] > d[i - 1] && d[i] >= d[i + 1] {
            peaks.push((i, d[i]));
        }
    }
    let mut chosen: Vec<usize> = match selection {
        LineSelection::Count(want) => {
            if want == 0 {
                return Err(Error::InvalidParameter("requested zero lines".into()));
            }
            if peaks.len() < want {
                return Err(Error::TooFewPeaks { expected: want, found: peaks.len() });
            }
            peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
            peaks[..want].iter().map(|p| p.0).collect()
        }
        LineSelection::ProminenceDb(db) => {
            if !(db.is_finite() && db > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "prominence threshold must be positive, got {db}"
                )));
            }
            let thresh = floor_density * 10f64.powf(db / 10.0);
            peaks.iter().filter(|p| p.1 > thresh).map(|p| p.0).collect()
        }
    };
    chosen.sort_unstable();
    let mut out = Vec::with_capacity(chosen.len());
    for i in chosen {
        // quadratic interpolation of log power across the peak
        let (lm, l0, lp) = (d[i - 1].max(f64::MIN_POSITIVE).ln(), d[i].ln(), d[i + 1].max(f64::MIN_POSITIVE).ln());
        let denom = lm - 2.0 * l0 + lp;
        let delta = if denom < 0.0 { 0.5 * (lm - lp) / denom } else { 0.0 };
        let freq_hz = (i as f64 + delta) * pg.resolution_hz;
        let mut power = 0.0;
        for j in i - LOBE_HALF_BINS..=i + LOBE_HALF_BINS {
            power += d[j] * pg.resolution_hz;
        }
        out.push(LineEstimate { freq_hz, amplitude: (2.0 * power).sqrt(), power });
    }
    Ok(out)
}

/// Least-squares fit of a uniform frequency grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFit {
    /// Frequency at the middle grid index.
    pub center_hz: f64,
    pub spacing_hz: f64,
}

impl GridFit {
    /// Grid frequency at signed line index `m`.
    pub fn line_freq(&self, m: i32) -> f64 {
        self.center_hz + m as f64 * self.spacing_hz
    }
}

/// Fits `f_i = center + m_i * spacing` to sorted line frequencies, with
/// `m_i` the symmetric integer indices `-(M-1)/2..=(M-1)/2`.
///
/// Averaging over many lines reduces the spacing error by roughly the
/// number of lines relative to a single-line estimate.
pub fn fit_uniform_grid(freqs: &[f64]) -> Result<GridFit> {
    let m_total = freqs.len();
    if m_total < 2 || m_total % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "grid fit needs an odd number of at least 3 lines, got {m_total}"
        )));
    }
    for w in freqs.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidParameter("line frequencies must be increasing".into()));
        }
    }
    let half = (m_total / 2) as i32;
    let mut sxx = 0.0;
    let mut sxf = 0.0;
    let mut sf = 0.0;
    for (i, &f) in freqs.iter().enumerate() {
        let x = (i as i32 - half) as f64;
        sxx += x * x;
        sxf += x * f;
        sf += f;
    }
    Ok(GridFit { center_hz: sf / m_total as f64, spacing_hz: sxf / sxx })
}

/// Refines a line frequency by maximizing the DFT magnitude over a span
/// around `f0` with golden-section search.
///
/// The span should be about one periodogram bin so the magnitude is
/// unimodal (within the main lobe of the full-record transform the power
/// is smooth and single-peaked).
pub fn refine_line_freq(
    samples: &Array1<f64>,
    sample_rate: f64,
    f0: f64,
    span_hz: f64,
) -> Result<f64> {
    if !(span_hz > 0.0) || !(f0 - span_hz / 2.0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "invalid refinement span {span_hz} around {f0}"
        )));
    }
    let power = |f: f64| -> f64 {
        let w = 2.0 * std::f64::consts::PI * f / sample_rate;
        // Goertzel-style accumulation of sum y[k] e^{-jwk}
        let mut re = 0.0;
        let mut im = 0.0;
        let (dsin, dcos) = w.sin_cos();
        let mut c = 1.0;
        let mut s = 0.0;
        for &y in samples.iter() {
            re += y * c;
            im -= y * s;
            let c2 = c * dcos - s * dsin;
            s = s * dcos + c * dsin;
            c = c2;
        }
        re * re + im * im
    };
    // coarse scan keeps the search inside the global main lobe
    let scan = 16;
    let mut best_f = f0;
    let mut best_p = f64::NEG_INFINITY;
    for i in 0..=scan {
        let f = f0 - span_hz / 2.0 + span_hz * i as f64 / scan as f64;
        let p = power(f);
        if p > best_p {
            best_p = p;
            best_f = f;
        }
    }
    let mut lo = best_f - span_hz / scan as f64;
    let mut hi = best_f + span_hz / scan as f64;
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut p1 = power(x1);
    let mut p2 = power(x2);
    for _ in 0..60 {
        if p1 < p2 {
            lo = x1;
            x1 = x2;
            p1 = p2;
            x2 = lo + phi * (hi - lo);
            p2 = power(x2);
        } else {
            hi = x2;
            x2 = x1;
            p2 = p1;
            x1 = hi - phi * (hi - lo);
            p1 = power(x1);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Per-line phase at the first sample and amplitude from a short DFT over
/// the head of the record.
///
/// For `y = sum a sin(2 pi f k / Fs + phi)` the single-frequency DFT over a
/// window `W` gives `phi = arg X + pi/2` and `a = 2 |X| / W`. The window
/// must cover several beat periods between neighboring lines so they stay
/// near-orthogonal; `W = 2048` resolves lines a few hundred samples apart
/// to a couple of percent.
///
/// The phases make a good extended-Kalman-filter prior: a diffuse prior
/// over dozens of coupled line phases lets the first nonlinear updates step
/// far outside the correct likelihood basin, and with slow phase dynamics
/// the filter never recovers from such a start.
pub fn dft_phases(
    samples: &Array1<f64>,
    sample_rate: f64,
    freqs: &[f64],
    window: usize,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if window < 2 || window > samples.len() {
        return Err(Error::InvalidParameter(format!(
            "phase window {window} not in [2, {}]",
            samples.len()
        )));
    }
    let mut phases = Array1::zeros(freqs.len());
    let mut amps = Array1::zeros(freqs.len());
    for (j, &f) in freqs.iter().enumerate() {
        let w = 2.0 * std::f64::consts::PI * f / sample_rate;
        let mut re = 0.0;
        let mut im = 0.0;
        for k in 0..window {
            let (s, c) = (w * k as f64).sin_cos();
            re += samples[k] * c;
            im -= samples[k] * s;
        }
        phases[j] = im.atan2(re) + std::f64::consts::PI / 2.0;
        amps[j] = 2.0 * (re * re + im * im).sqrt() / window as f64;
    }
    Ok((phases, amps))
}
