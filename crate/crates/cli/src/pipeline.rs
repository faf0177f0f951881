//! The three experiment flows: simulation, single-record characterization,
//! and the assembled figure reproductions.
//!
//! Characterization trusts the configured comb grid for the tracking model
//! and uses spectral detection to validate it and to estimate amplitudes
//! and the noise floor. A grid is something the experimenter sets, and no
//! single record can separate a sub-kHz grid offset from the realized trend
//! of the phase random walk; tracking on a misdeclared grid would silently
//! fold that offset into the recovered phases as a linear ramp.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::Serialize;

use combtrack_core::analysis::{
    correlation_from_covariance, differential_phases, empirical_variance_curve, matrix_error,
    sample_increment_correlation, warm_start_params_with_noise, CorrelationMatrix, VarianceCurve,
};
use combtrack_core::baseline::run_conventional;
use combtrack_core::comb::{
    self, CombSpec, ElectroOpticNoiseParams, NoiseModel, PhaseTrajectories, SignalRecord,
};
use combtrack_core::ekf::{CombMeasurement, GaussianBelief};
use combtrack_core::em::{run_em, EmOptions, EmResult, QStructure};
use combtrack_core::spectral::{
    detect_lines, dft_phases, periodogram, LineEstimate, LineSelection, WelchOptions,
};

use crate::config::{
    CorrelationSource, ExperimentConfig, InitKind, ProcessNoise, QStructureKind, Resolved,
};
use crate::io;
use crate::{CliError, Result};

/// Characterization estimator choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ml,
    Conventional,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ml => "ml",
            Method::Conventional => "conventional",
        }
    }
}

/// Scale ladder for extra EM starts: unit start first, then alternating
/// larger and smaller initial covariances.
fn restart_scale(start: usize) -> f64 {
    if start == 0 {
        return 1.0;
    }
    let level = start.div_ceil(2) as i32;
    if start % 2 == 1 {
        4f64.powi(level)
    } else {
        4f64.powi(-level)
    }
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Serialize)]
struct TargetEcho {
    label: String,
    avg_snr_db: f64,
    sigma_sn2: f64,
}

#[derive(Debug, Serialize)]
struct ResolvedEcho<'a> {
    config: &'a ExperimentConfig,
    center_hz: f64,
    spacing_hz: f64,
    sample_rate_hz: f64,
    num_samples: usize,
    line_indices: Vec<i32>,
    seeds: Vec<u64>,
    targets: Vec<TargetEcho>,
}

/// Generates ground truth and signals for every (seed, target) pair.
///
/// Writes per seed one truth trajectory file and one signal per measurement
/// target, plus the true process covariance and its correlation, and an
/// echo of the config with every solved quantity filled in.
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let r = config.resolve()?;
    let out = r.output_dir.clone();
    let idx = r.line_indices().to_vec();
    let mut written = Vec::new();

    let q = r.process.covariance(&idx);
    let q_path = out.join("true_q.csv");
    io::write_text(&q_path, &io::matrix_csv(&idx, &q))?;
    written.push(q_path);
    let corr = correlation_from_covariance(&q, &idx)?;
    let corr_path = out.join("true_correlation.csv");
    io::write_text(&corr_path, &corr.to_csv())?;
    written.push(corr_path);

    for &seed in &r.seeds {
        let truth = simulate_truth(&r, seed)?;
        let truth_path = out.join(format!("truth_seed{seed}.dcpt"));
        io::write_phases(&truth, "simulated ground truth", Some(seed), &truth_path)?;
        written.push(truth_path);
        for t in &r.targets {
            let rec = comb::synthesize_photocurrent(&r.spec, truth.clone(), t.meas_var, seed)?;
            let path = out.join(format!("signal_seed{seed}_{}.dcsr", t.label));
            io::write_signal(&rec, &format!("simulated, {}", t.label), &path)?;
            written.push(path);
        }
    }

    let echo = ResolvedEcho {
        config,
        center_hz: freq_of_line(&r.spec, 0),
        spacing_hz: grid_spacing(&r.spec),
        sample_rate_hz: r.spec.sample_rate(),
        num_samples: r.num_samples,
        line_indices: idx,
        seeds: r.seeds.clone(),
        targets: r
            .targets
            .iter()
            .map(|t| TargetEcho {
                label: t.label.clone(),
                avg_snr_db: t.avg_snr_db,
                sigma_sn2: t.meas_var,
            })
            .collect(),
    };
    let echo_path = out.join("resolved_config.json");
    io::write_json(&echo_path, &echo)?;
    written.push(echo_path);
    Ok(written)
}

fn simulate_truth(r: &Resolved, seed: u64) -> Result<PhaseTrajectories> {
    let idx = r.line_indices();
    let traj = match &r.process {
        ProcessNoise::Rank2(p) => comb::generate_wiener_phases(
            p,
            idx,
            r.num_samples,
            r.spec.sample_rate(),
            seed,
        )?,
        ProcessNoise::Full(q) => comb::generate_correlated_phases(
            q,
            idx,
            r.num_samples,
            r.spec.sample_rate(),
            seed,
        )?,
    };
    Ok(traj)
}

fn freq_of_line(spec: &CombSpec, m: i32) -> f64 {
    let j = spec
        .line_indices()
        .iter()
        .position(|&i| i == m)
        .expect("line exists");
    spec.rel_angular_freqs()[j] / (2.0 * std::f64::consts::PI)
}

fn grid_spacing(spec: &CombSpec) -> f64 {
    let idx = spec.line_indices();
    if idx.len() < 2 {
        return 0.0;
    }
    let f_last = spec.rel_angular_freqs()[idx.len() - 1] / (2.0 * std::f64::consts::PI);
    let f_first = spec.rel_angular_freqs()[0] / (2.0 * std::f64::consts::PI);
    (f_last - f_first) / (idx[idx.len() - 1] - idx[0]) as f64
}

// ---------------------------------------------------------------------------
// characterize

/// Spectral view of one record: the validated model spec (configured grid,
/// detected amplitudes) plus the raw line estimates and noise floor.
#[derive(Debug, Clone)]
pub struct DetectedComb {
    pub spec: CombSpec,
    pub lines: Vec<LineEstimate>,
    pub floor_var: f64,
}

/// Detects lines, checks them against the configured grid, and rebuilds the
/// comb spec with measured amplitudes.
pub fn detect_comb(rec: &SignalRecord, r: &Resolved) -> Result<DetectedComb> {
    let expected = r.spectral.expected_lines.unwrap_or(r.spec.num_lines());
    let opts = WelchOptions { segment_len: r.spectral.segment_len };
    let pg = periodogram(&rec.samples, rec.sample_rate, &opts)?;
    let floor_var = pg.noise_floor_variance();
    let lines = detect_lines(&pg, LineSelection::Count(expected))?;

    let idx = r.line_indices();
    let spacing = grid_spacing(&r.spec);
    let mut amps = Vec::with_capacity(idx.len());
    for &m in idx {
        let f_expect = freq_of_line(&r.spec, m);
        let nearest = lines
            .iter()
            .min_by(|a, b| {
                (a.freq_hz - f_expect).abs().total_cmp(&(b.freq_hz - f_expect).abs())
            })
            .expect("detector returned at least one line");
        let err = (nearest.freq_hz - f_expect).abs();
        if err > 0.5 * spacing.max(pg.resolution_hz) {
            return Err(CliError::Core(combtrack_core::Error::InvalidParameter(format!(
                "no detected line near the configured grid frequency {f_expect:.3e} Hz for \
                 line {m} (closest is {err:.3e} Hz away); the config does not describe \
                 this signal"
            ))));
        }
        amps.push(nearest.amplitude);
    }

    let freqs: Vec<f64> = idx.iter().map(|&m| freq_of_line(&r.spec, m)).collect();
    let angular: Vec<f64> = freqs.iter().map(|f| 2.0 * std::f64::consts::PI * f).collect();
    let spec = CombSpec::new(idx.to_vec(), amps, angular, rec.sample_rate)?;
    Ok(DetectedComb { spec, lines, floor_var })
}

#[derive(Debug, Serialize)]
pub struct LineReport {
    pub index: i32,
    pub model_freq_hz: f64,
    pub detected_freq_hz: f64,
    pub detected_amplitude: f64,
}

/// Everything needed to re-run this characterization without the original
/// config file.
#[derive(Debug, Serialize)]
pub struct RerunSpec<'a> {
    pub command: String,
    pub signal: String,
    pub method: &'static str,
    pub config: &'a ExperimentConfig,
}

#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub method: &'static str,
    pub signal: String,
    pub sample_rate_hz: f64,
    pub num_samples: usize,
    pub lines: Vec<LineReport>,
    /// Median-based white-noise variance read off the periodogram.
    pub noise_floor_sigma_sn2: f64,
    /// The pipeline's final measurement-noise estimate; for `ml` this is
    /// the EM update, for `conventional` the periodogram floor.
    pub final_sigma_sn2: f64,
    pub learned_sigma_c2: Option<f64>,
    pub learned_sigma_rf2: Option<f64>,
    pub em_iterations: Option<usize>,
    pub em_converged: Option<bool>,
    pub final_loglik: Option<f64>,
    pub wall_time_s: f64,
    pub rerun: RerunSpec<'a>,
}

/// In-memory result of one characterization, with the artifacts the figure
/// pipelines aggregate.
pub struct Characterization {
    pub method: Method,
    pub phases: PhaseTrajectories,
    pub correlation: CorrelationMatrix,
    pub variance: VarianceCurve,
    pub learned: Option<ElectroOpticNoiseParams>,
    pub final_sigma_sn2: f64,
    pub em: Option<EmResult>,
    pub detected: DetectedComb,
}

/// Runs one method on an already loaded record.
pub fn characterize_record(
    rec: &SignalRecord,
    r: &Resolved,
    method: Method,
) -> Result<Characterization> {
    let detected = detect_comb(rec, r)?;
    match method {
        Method::Conventional => {
            let traj = run_conventional(&rec.samples, &detected.spec, &r.baseline)?;
            let correlation = sample_increment_correlation(&traj)?;
            let variance = variance_curve_of(&traj)?;
            Ok(Characterization {
                method,
                phases: traj,
                correlation,
                variance,
                learned: None,
                final_sigma_sn2: detected.floor_var,
                em: None,
                detected,
            })
        }
        Method::Ml => run_ml(rec, detected, r),
    }
}

fn variance_curve_of(traj: &PhaseTrajectories) -> Result<VarianceCurve> {
    let reference = if traj.position_of(0).is_some() {
        0
    } else {
        traj.line_indices[0]
    };
    let diff = differential_phases(traj, reference)?;
    Ok(empirical_variance_curve(&diff)?)
}

fn run_ml(rec: &SignalRecord, detected: DetectedComb, r: &Resolved) -> Result<Characterization> {
    let k_total = rec.samples.len();
    let idx = r.line_indices().to_vec();
    let fs = rec.sample_rate;
    let em_cfg = &r.em;

    // The conventional pass feeds the warm start; its trajectories are
    // cheap relative to one EM iteration.
    let conv = run_conventional(&rec.samples, &detected.spec, &r.baseline)?;
    let init_params = if em_cfg.warm_start {
        let p = warm_start_params_with_noise(
            &conv,
            em_cfg.warm_start_lag,
            r.baseline.bandwidth_hz,
            detected.floor_var,
            detected.spec.amplitudes(),
        )?;
        // The noise correction can clamp a variance to zero on short or
        // noisy records; EM needs strictly positive process noise to move.
        ElectroOpticNoiseParams::new(p.sigma_c2.max(1e-12), p.sigma_rf2.max(1e-14))?
    } else {
        let q_diag = 2.0 * std::f64::consts::PI * em_cfg.linewidth_guess_hz / fs;
        ElectroOpticNoiseParams::new(q_diag, 0.0)?
    };
    let q_init = match em_cfg.warm_start {
        true => init_params.process_cov(&idx),
        false => {
            // Diagonal initialization: independent lines at the guessed
            // linewidth, which the structured M step immediately reshapes.
            let q_diag = 2.0 * std::f64::consts::PI * em_cfg.linewidth_guess_hz / fs;
            Array2::from_diag(&Array1::from_elem(idx.len(), q_diag))
        }
    };

    let (mean0, p0) = initial_belief(rec, &detected, &conv, r, &init_params)?;
    let model = CombMeasurement::new(&detected.spec, k_total);
    let opts = EmOptions {
        max_iters: em_cfg.max_iters,
        rel_loglik_tol: em_cfg.rel_loglik_tol,
        structure: match em_cfg.q_structure {
            QStructureKind::Rank2 => QStructure::Rank2 { line_indices: idx.clone() },
            QStructureKind::Full => QStructure::Full,
        },
        psd_floor: em_cfg.psd_floor,
        ..EmOptions::default()
    };

    let mut best: Option<EmResult> = None;
    for start in 0..em_cfg.restarts {
        let scale = restart_scale(start);
        let init = NoiseModel::new(q_init.mapv(|v| v * scale), detected.floor_var)?;
        let prior = GaussianBelief::new(mean0.clone(), p0.clone())?;
        let fit = run_em(&model, &rec.samples, &init, &prior, &opts)?;
        let better = match &best {
            None => true,
            Some(b) => {
                let a = fit.trace.last().map(|i| i.loglik);
                let c = b.trace.last().map(|i| i.loglik);
                a > c
            }
        };
        if better {
            best = Some(fit);
        }
    }
    let fit = best.expect("at least one EM start runs");

    let guard = (k_total as f64 * r.baseline.guard_fraction).floor() as usize;
    let smoothed =
        PhaseTrajectories::new(fit.final_smoother.means.clone(), fs, idx.clone(), guard)?;

    let correlation = match em_cfg.correlation_source {
        CorrelationSource::LearnedQ => {
            correlation_from_covariance(fit.noise.process_cov(), &idx)?
        }
        CorrelationSource::SmoothedIncrements => sample_increment_correlation(&smoothed)?,
    };
    let variance = variance_curve_of(&smoothed)?;

    Ok(Characterization {
        method: Method::Ml,
        phases: smoothed,
        correlation,
        variance,
        learned: fit.electro_optic,
        final_sigma_sn2: fit.noise.meas_var(),
        em: Some(fit),
        detected,
    })
}

/// Initial filter belief per the configured policy.
fn initial_belief(
    rec: &SignalRecord,
    detected: &DetectedComb,
    conv: &PhaseTrajectories,
    r: &Resolved,
    init_params: &ElectroOpticNoiseParams,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let idx = r.line_indices();
    let m_total = idx.len();
    match r.em.init {
        InitKind::Zeros => {
            let var = (std::f64::consts::PI / 2.0) * (std::f64::consts::PI / 2.0);
            Ok((
                Array1::zeros(m_total),
                Array2::from_diag(&Array1::from_elem(m_total, var)),
            ))
        }
        InitKind::Baseline => {
            // The first extracted sample sits inside the filter's edge
            // transient, so the prior stays loose.
            Ok((
                conv.phases.row(0).to_owned(),
                Array2::from_diag(&Array1::from_elem(m_total, 0.25)),
            ))
        }
        InitKind::Dft => {
            let window = r.em.init_window.min(rec.samples.len());
            let freqs: Vec<f64> = idx.iter().map(|&m| freq_of_line(&r.spec, m)).collect();
            let (phi0, _amps) = dft_phases(&rec.samples, rec.sample_rate, &freqs, window)?;
            // Prior variance per line: phase drift accumulated over the
            // window plus the extraction noise, with a small floor.
            let w = window as f64;
            let mut p0 = Array1::zeros(m_total);
            for (j, &m) in idx.iter().enumerate() {
                let qm = init_params.sigma_c2 + (m as f64) * (m as f64) * init_params.sigma_rf2;
                let a = detected.spec.amplitudes()[j].max(1e-12);
                p0[j] = qm * w / 3.0 + 4.0 * detected.floor_var / (a * a * w) + 1e-4;
            }
            Ok((phi0, Array2::from_diag(&p0)))
        }
    }
}

/// Runs a method against a signal file and writes phases, correlation,
/// variance, the EM trace for `ml`, and a run report.
pub fn cmd_characterize(
    signal: &Path,
    method: Method,
    config: &ExperimentConfig,
) -> Result<Vec<PathBuf>> {
    let t0 = Instant::now();
    let r = config.resolve()?;
    let rec = io::read_signal(signal)?;
    let ch = characterize_record(&rec, &r, method)?;

    let out = &r.output_dir;
    let tag = method.as_str();
    let mut written = Vec::new();

    let phases_path = out.join(format!("phases_{tag}.dcpt"));
    io::write_phases(&ch.phases, &format!("characterize {tag}"), rec.seed, &phases_path)?;
    written.push(phases_path);

    let corr_path = out.join(format!("correlation_{tag}.csv"));
    io::write_text(&corr_path, &ch.correlation.to_csv())?;
    written.push(corr_path);

    let var_path = out.join(format!("variance_{tag}.csv"));
    io::write_text(&var_path, &ch.variance.to_csv())?;
    written.push(var_path);

    if let Some(em) = &ch.em {
        let trace_path = out.join("em_trace.csv");
        io::write_text(&trace_path, &em.trace.to_csv())?;
        written.push(trace_path);
    }

    let lines: Vec<LineReport> = r
        .line_indices()
        .iter()
        .map(|&m| {
            let f_model = freq_of_line(&r.spec, m);
            let nearest = ch
                .detected
                .lines
                .iter()
                .min_by(|a, b| {
                    (a.freq_hz - f_model).abs().total_cmp(&(b.freq_hz - f_model).abs())
                })
                .expect("detection succeeded");
            LineReport {
                index: m,
                model_freq_hz: f_model,
                detected_freq_hz: nearest.freq_hz,
                detected_amplitude: nearest.amplitude,
            }
        })
        .collect();
    let report = RunReport {
        method: tag,
        signal: signal.display().to_string(),
        sample_rate_hz: rec.sample_rate,
        num_samples: rec.samples.len(),
        lines,
        noise_floor_sigma_sn2: ch.detected.floor_var,
        final_sigma_sn2: ch.final_sigma_sn2,
        learned_sigma_c2: ch.learned.as_ref().map(|p| p.sigma_c2),
        learned_sigma_rf2: ch.learned.as_ref().map(|p| p.sigma_rf2),
        em_iterations: ch.em.as_ref().map(|e| e.trace.len()),
        em_converged: ch.em.as_ref().map(|e| e.converged),
        final_loglik: ch.em.as_ref().and_then(|e| e.trace.last()).map(|i| i.loglik),
        wall_time_s: t0.elapsed().as_secs_f64(),
        rerun: RerunSpec {
            command: format!("characterize --method {tag}"),
            signal: signal.display().to_string(),
            method: tag,
            config,
        },
    };
    let report_path = out.join(format!("report_{tag}.json"));
    io::write_json(&report_path, &report)?;
    written.push(report_path);
    Ok(written)
}

// ---------------------------------------------------------------------------
// reproduce-fig

/// Dispatches a figure reproduction; figures 2 and 3 are the numerical
/// studies, figure 4 needs data that does not ship.
pub fn cmd_reproduce_fig(figure: u32, config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    match figure {
        2 => reproduce_fig2(config),
        3 => reproduce_fig3(config),
        4 => Err(CliError::Usage(
            "figure 4 requires experimental data file (not bundled); run `characterize` \
             on your own signal file instead"
                .into(),
        )),
        other => Err(CliError::Usage(format!(
            "unknown figure {other}; this tool reproduces figures 2 and 3"
        ))),
    }
}

fn entrywise_mean(mats: &[Array2<f64>]) -> Array2<f64> {
    let mut sum = mats[0].clone();
    for m in &mats[1..] {
        sum += m;
    }
    sum / mats.len() as f64
}

fn curve_mean(curves: &[Array1<f64>]) -> Array1<f64> {
    let mut sum = curves[0].clone();
    for c in &curves[1..] {
        sum += c;
    }
    sum / curves.len() as f64
}

fn curve_csv(line_indices: &[i32], values: &Array1<f64>) -> String {
    VarianceCurve { line_indices: line_indices.to_vec(), values: values.clone() }.to_csv()
}

/// Correlation matrices per SNR: simulates each (seed, SNR) cell, runs both
/// methods, writes per-panel matrices (seed-averaged) and a summary of
/// seed-averaged matrix errors against the true correlation.
fn reproduce_fig2(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let r = config.resolve()?;
    let out = r.output_dir.join("fig2");
    let idx = r.line_indices().to_vec();
    let mut written = Vec::new();

    let q = r.process.covariance(&idx);
    let truth_corr = correlation_from_covariance(&q, &idx)?;

    let mut truths = Vec::new();
    for &seed in &r.seeds {
        let truth = simulate_truth(&r, seed)?;
        let path = out.join(format!("truth_seed{seed}.dcpt"));
        io::write_phases(&truth, "simulated ground truth", Some(seed), &path)?;
        written.push(path);
        truths.push((seed, truth));
    }

    let mut summary = String::from("snr_db,method,frobenius,max_abs\n");
    for t in &r.targets {
        let panel = out.join(&t.label);
        io::write_text(&panel.join("true_correlation.csv"), &truth_corr.to_csv())?;
        written.push(panel.join("true_correlation.csv"));

        let mut per_method = [(Method::Conventional, Vec::new()), (Method::Ml, Vec::new())];
        let mut errors = vec![(0.0f64, 0.0f64); 2];
        for (seed, truth) in &truths {
            let rec = comb::synthesize_photocurrent(&r.spec, truth.clone(), t.meas_var, *seed)?;
            let sig_path = panel.join(format!("signal_seed{seed}.dcsr"));
            io::write_signal(&rec, &format!("simulated, {}", t.label), &sig_path)?;
            written.push(sig_path);
            for (slot, (method, mats)) in per_method.iter_mut().enumerate() {
                let ch = characterize_record(&rec, &r, *method)?;
                let err = matrix_error(&ch.correlation.values, &truth_corr.values)?;
                errors[slot].0 += err.frobenius;
                errors[slot].1 += err.max_abs;
                mats.push(ch.correlation.values);
            }
        }
        let n = truths.len() as f64;
        for (slot, (method, mats)) in per_method.iter().enumerate() {
            let mean = entrywise_mean(mats);
            let path = panel.join(format!("correlation_{}.csv", method.as_str()));
            io::write_text(
                &path,
                &CorrelationMatrix { line_indices: idx.clone(), values: mean }.to_csv(),
            )?;
            written.push(path);
            use std::fmt::Write as _;
            writeln!(
                summary,
                "{},{},{},{}",
                t.avg_snr_db,
                method.as_str(),
                errors[slot].0 / n,
                errors[slot].1 / n
            )
            .expect("string write cannot fail");
        }
    }
    let summary_path = out.join("fig2_summary.csv");
    io::write_text(&summary_path, &summary)?;
    written.push(summary_path);
    Ok(written)
}

/// Differential-phase variance versus line index at one SNR: the expected
/// curve from the true process noise plus seed-averaged measured curves for
/// both methods.
fn reproduce_fig3(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let r = config.resolve()?;
    if r.targets.len() != 1 {
        return Err(CliError::Config(format!(
            "figure 3 plots one SNR; the config resolves {} targets",
            r.targets.len()
        )));
    }
    let target = &r.targets[0];
    let out = r.output_dir.join("fig3");
    let idx = r.line_indices().to_vec();
    let mut written = Vec::new();

    // Expected interior sample variance of the differential random walk:
    // increments of line m relative to line 0 have variance
    // q_mm + q_00 - 2 q_m0 per step, and a walk watched for K steps shows
    // about K/6 of that as sample variance.
    let q = r.process.covariance(&idx);
    let r0 = idx.iter().position(|&m| m == 0).unwrap_or(0);
    let k = r.num_samples as f64;
    let expected = Array1::from_shape_fn(idx.len(), |i| {
        (q[[i, i]] + q[[r0, r0]] - 2.0 * q[[i, r0]]) * k / 6.0
    });
    let exp_path = out.join("variance_expected.csv");
    io::write_text(&exp_path, &curve_csv(&idx, &expected))?;
    written.push(exp_path);

    let mut conv_curves = Vec::new();
    let mut ml_curves = Vec::new();
    for &seed in &r.seeds {
        let truth = simulate_truth(&r, seed)?;
        let truth_path = out.join(format!("truth_seed{seed}.dcpt"));
        io::write_phases(&truth, "simulated ground truth", Some(seed), &truth_path)?;
        written.push(truth_path);
        let rec = comb::synthesize_photocurrent(&r.spec, truth.clone(), target.meas_var, seed)?;
        let sig_path = out.join(format!("signal_seed{seed}.dcsr"));
        io::write_signal(&rec, &format!("simulated, {}", target.label), &sig_path)?;
        written.push(sig_path);

        let conv = characterize_record(&rec, &r, Method::Conventional)?;
        conv_curves.push(conv.variance.values);
        let ml = characterize_record(&rec, &r, Method::Ml)?;
        ml_curves.push(ml.variance.values);
    }

    let conv_mean = curve_mean(&conv_curves);
    let ml_mean = curve_mean(&ml_curves);
    let conv_path = out.join("variance_conventional.csv");
    io::write_text(&conv_path, &curve_csv(&idx, &conv_mean))?;
    written.push(conv_path);
    let ml_path = out.join("variance_ml.csv");
    io::write_text(&ml_path, &curve_csv(&idx, &ml_mean))?;
    written.push(ml_path);

    let mut summary = String::from("snr_db,method,frobenius,max_abs\n");
    let as_col = |v: &Array1<f64>| {
        Array2::from_shape_fn((v.len(), 1), |(i, _)| v[i])
    };
    for (name, curve) in [("conventional", &conv_mean), ("ml", &ml_mean)] {
        let err = matrix_error(&as_col(curve), &as_col(&expected))?;
        use std::fmt::Write as _;
        writeln!(summary, "{},{},{},{}", target.avg_snr_db, name, err.frobenius, err.max_abs)
            .expect("string write cannot fail");
    }
    let summary_path = out.join("fig3_summary.csv");
    io::write_text(&summary_path, &summary)?;
    written.push(summary_path);
    Ok(written)
}
