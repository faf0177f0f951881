//! Experiment configuration: JSON schema, validation, and resolution into
//! the concrete objects the pipelines run on.
//!
//! Parsing is strict (unknown keys are errors) so a typo never silently
//! falls back to a default. Resolution turns the declarative sections into
//! a [`CombSpec`], a process-noise model, and one measurement-noise target
//! per requested SNR, solving for the variance where a target is given.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use combtrack_core::baseline::BaselineOptions;
use combtrack_core::comb::{self, CombSpec, ElectroOpticNoiseParams};

use crate::{CliError, Result};

/// Default process-noise increments, in rad^2 per sample. At the default
/// 10 GS/s these correspond to a few-kHz carrier linewidth with the
/// repetition-rate term two orders of magnitude weaker, which keeps the
/// edge-line linewidth within the same order as the carrier.
pub const DEFAULT_SIGMA_C2: f64 = 4e-6;
pub const DEFAULT_SIGMA_RF2: f64 = 8e-8;

/// A scalar that may also be written as a list; scalars broadcast.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombSection {
    /// Lines are indexed `-half_count..=half_count`.
    #[serde(default = "default_half_count")]
    pub half_count: usize,
    /// Beat frequency of line 0. Omit together with `spacing_hz` to use a
    /// grid scaled to fit the sample rate.
    #[serde(default)]
    pub center_hz: Option<f64>,
    #[serde(default)]
    pub spacing_hz: Option<f64>,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
    /// Uniform scalar or one value per line.
    #[serde(default = "default_amplitudes")]
    pub amplitudes: OneOrMany<f64>,
}

fn default_half_count() -> usize {
    24
}

fn default_sample_rate() -> f64 {
    1e10
}

fn default_amplitudes() -> OneOrMany<f64> {
    OneOrMany::One(1.0)
}

impl Default for CombSection {
    fn default() -> Self {
        Self {
            half_count: default_half_count(),
            center_hz: None,
            spacing_hz: None,
            sample_rate_hz: default_sample_rate(),
            amplitudes: default_amplitudes(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Rank-two process model: carrier and repetition-rate increment
    /// variances, rad^2 per sample. Give both or neither.
    #[serde(default)]
    pub sigma_c2: Option<f64>,
    #[serde(default)]
    pub sigma_rf2: Option<f64>,
    /// Full per-sample increment covariance, row major, one row per line.
    /// Mutually exclusive with the rank-two pair.
    #[serde(default)]
    pub process_cov: Option<Vec<Vec<f64>>>,
    /// Measurement-noise variance. Exactly one of this and
    /// `target_avg_snr_db` must be set.
    #[serde(default)]
    pub meas_var: Option<f64>,
    /// Average per-line SNR target(s) in dB; the variance is solved per
    /// target and one signal is produced for each.
    #[serde(default)]
    pub target_avg_snr_db: Option<OneOrMany<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSection {
    pub num_samples: usize,
    #[serde(default = "default_seeds")]
    pub seeds: OneOrMany<u64>,
}

fn default_seeds() -> OneOrMany<u64> {
    OneOrMany::One(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QStructureKind {
    Rank2,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Windowed DFT phase estimates with a drift-matched prior covariance.
    Dft,
    /// Zero phases under a weakly informative prior.
    Zeros,
    /// First extracted sample of the conventional pipeline.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationSource {
    /// Normalize the learned process covariance. Default: the learned model
    /// is the estimator's statement about the noise sources, and increments
    /// of smoothed trajectories are correlated by the smoother itself.
    LearnedQ,
    /// Sample correlation of smoothed-trajectory increments.
    SmoothedIncrements,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmSection {
    pub max_iters: usize,
    /// Stop when the log-likelihood gain drops below this relative change.
    pub rel_loglik_tol: f64,
    pub q_structure: QStructureKind,
    /// Eigenvalue floor applied to full-structure updates.
    pub psd_floor: f64,
    /// Number of EM starts; extra starts scale the initial covariance up
    /// and down and the best final likelihood wins.
    pub restarts: usize,
    /// Linewidth scale used for the diagonal fallback initialization when
    /// the warm start is disabled.
    pub linewidth_guess_hz: f64,
    /// Initialize the covariance from lagged differences of the
    /// conventional pipeline's trajectories.
    pub warm_start: bool,
    pub warm_start_lag: usize,
    pub init: InitKind,
    /// Samples used by the DFT state initialization.
    pub init_window: usize,
    pub correlation_source: CorrelationSource,
}

impl Default for EmSection {
    fn default() -> Self {
        Self {
            max_iters: 100,
            rel_loglik_tol: 1e-6,
            q_structure: QStructureKind::Rank2,
            psd_floor: 0.0,
            restarts: 1,
            linewidth_guess_hz: 1e4,
            warm_start: true,
            warm_start_lag: 300,
            init: InitKind::Dft,
            init_window: 1024,
            correlation_source: CorrelationSource::LearnedQ,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub bandwidth_hz: f64,
    pub guard_fraction: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let d = BaselineOptions::default();
        Self { bandwidth_hz: d.bandwidth_hz, guard_fraction: d.guard_fraction }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralSection {
    /// Welch segment length; a power of two is picked from the record when
    /// omitted.
    pub segment_len: Option<usize>,
    /// Line count the detector looks for; defaults to the comb's count.
    pub expected_lines: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub comb: CombSection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub record: RecordSection,
    #[serde(default)]
    pub em: EmSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub spectral: SpectralSection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Process-noise truth used by simulation.
#[derive(Debug, Clone)]
pub enum ProcessNoise {
    Rank2(ElectroOpticNoiseParams),
    Full(Array2<f64>),
}

impl ProcessNoise {
    /// Dense increment covariance over the given lines.
    pub fn covariance(&self, line_indices: &[i32]) -> Array2<f64> {
        match self {
            ProcessNoise::Rank2(p) => p.process_cov(line_indices),
            ProcessNoise::Full(q) => q.clone(),
        }
    }
}

/// One measurement-noise setting; simulation emits one signal per target.
#[derive(Debug, Clone)]
pub struct MeasTarget {
    /// File-name fragment, `snr<dB>` or `mvar<value>`.
    pub label: String,
    pub meas_var: f64,
    pub avg_snr_db: f64,
}

/// Everything a pipeline needs, with all options applied and solved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub spec: CombSpec,
    pub process: ProcessNoise,
    pub targets: Vec<MeasTarget>,
    pub num_samples: usize,
    pub seeds: Vec<u64>,
    pub em: EmSection,
    pub baseline: BaselineOptions,
    pub spectral: SpectralSection,
    pub output_dir: PathBuf,
}

impl Resolved {
    pub fn line_indices(&self) -> &[i32] {
        self.spec.line_indices()
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    /// Replaces the seed list and the output directory from command-line
    /// overrides.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<&Path>) {
        if let Some(s) = seed {
            self.record.seeds = OneOrMany::One(s);
        }
        if let Some(dir) = out {
            self.output_dir = dir.to_path_buf();
        }
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let spec = self.resolve_spec()?;
        let process = self.resolve_process(spec.num_lines())?;
        let targets = self.resolve_targets(&spec)?;

        if self.record.num_samples < 2 {
            return Err(config_err(format!(
                "record.num_samples must be at least 2, got {}",
                self.record.num_samples
            )));
        }
        let seeds = self.record.seeds.to_vec();
        if seeds.is_empty() {
            return Err(config_err("record.seeds must not be empty"));
        }

        let em = self.em.clone();
        if em.max_iters == 0 {
            return Err(config_err("em.max_iters must be at least 1"));
        }
        if !(em.rel_loglik_tol.is_finite() && em.rel_loglik_tol > 0.0) {
            return Err(config_err(format!(
                "em.rel_loglik_tol must be positive, got {}",
                em.rel_loglik_tol
            )));
        }
        if em.restarts == 0 {
            return Err(config_err("em.restarts counts starts and must be at least 1"));
        }
        if em.init_window < 2 {
            return Err(config_err("em.init_window must be at least 2"));
        }
        if em.warm_start_lag == 0 {
            return Err(config_err("em.warm_start_lag must be at least 1"));
        }
        if !(em.linewidth_guess_hz.is_finite() && em.linewidth_guess_hz > 0.0) {
            return Err(config_err(format!(
                "em.linewidth_guess_hz must be positive, got {}",
                em.linewidth_guess_hz
            )));
        }

        let baseline = BaselineOptions {
            bandwidth_hz: self.baseline.bandwidth_hz,
            guard_fraction: self.baseline.guard_fraction,
        };
        baseline.validate().map_err(|e| config_err(e.to_string()))?;

        if let Some(n) = self.spectral.segment_len {
            if n < 16 {
                return Err(config_err(format!(
                    "spectral.segment_len of {n} cannot resolve any line"
                )));
            }
        }

        Ok(Resolved {
            spec,
            process,
            targets,
            num_samples: self.record.num_samples,
            seeds,
            em,
            baseline,
            spectral: self.spectral.clone(),
            output_dir: self.output_dir.clone(),
        })
    }

    fn resolve_spec(&self) -> Result<CombSpec> {
        let c = &self.comb;
        let m_total = 2 * c.half_count + 1;
        let (center, spacing) = match (c.center_hz, c.spacing_hz) {
            (Some(f0), Some(df)) => (f0, df),
            (None, None) => CombSpec::scaled_grid(c.sample_rate_hz, c.half_count),
            _ => {
                return Err(config_err(
                    "comb.center_hz and comb.spacing_hz must be given together",
                ))
            }
        };
        let amps = match &c.amplitudes {
            OneOrMany::One(a) => vec![*a; m_total],
            OneOrMany::Many(v) => {
                if v.len() != m_total {
                    return Err(config_err(format!(
                        "comb.amplitudes has {} entries for {} lines",
                        v.len(),
                        m_total
                    )));
                }
                v.clone()
            }
        };
        CombSpec::uniform_grid(center, spacing, c.half_count, &amps, c.sample_rate_hz)
            .map_err(|e| config_err(e.to_string()))
    }

    fn resolve_process(&self, m_total: usize) -> Result<ProcessNoise> {
        let n = &self.noise;
        match (n.sigma_c2, n.sigma_rf2, &n.process_cov) {
            (Some(c2), Some(rf2), None) => Ok(ProcessNoise::Rank2(
                ElectroOpticNoiseParams::new(c2, rf2).map_err(|e| config_err(e.to_string()))?,
            )),
            (None, None, Some(rows)) => {
                if rows.len() != m_total || rows.iter().any(|r| r.len() != m_total) {
                    return Err(config_err(format!(
                        "noise.process_cov must be {m_total}x{m_total} to cover every line"
                    )));
                }
                let mut q = Array2::zeros((m_total, m_total));
                for (i, row) in rows.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        q[[i, j]] = v;
                    }
                }
                Ok(ProcessNoise::Full(q))
            }
            (None, None, None) => Ok(ProcessNoise::Rank2(
                ElectroOpticNoiseParams::new(DEFAULT_SIGMA_C2, DEFAULT_SIGMA_RF2)
                    .expect("defaults are valid"),
            )),
            (Some(_), None, None) | (None, Some(_), None) => Err(config_err(
                "noise.sigma_c2 and noise.sigma_rf2 must be given together",
            )),
            _ => Err(config_err(
                "give either the noise.sigma_c2/sigma_rf2 pair or noise.process_cov, not both",
            )),
        }
    }

    fn resolve_targets(&self, spec: &CombSpec) -> Result<Vec<MeasTarget>> {
        let n = &self.noise;
        match (n.meas_var, &n.target_avg_snr_db) {
            (Some(v), None) => {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(config_err(format!(
                        "noise.meas_var must be nonnegative, got {v}"
                    )));
                }
                let snr = comb::average_snr_db(spec, v);
                Ok(vec![MeasTarget { label: format!("mvar{v}"), meas_var: v, avg_snr_db: snr }])
            }
            (None, Some(targets)) => {
                let list = targets.to_vec();
                if list.is_empty() {
                    return Err(config_err("noise.target_avg_snr_db must not be empty"));
                }
                let mut out = Vec::with_capacity(list.len());
                for &db in &list {
                    let v = comb::meas_var_for_average_snr_db(spec, db)
                        .map_err(|e| config_err(e.to_string()))?;
                    out.push(MeasTarget {
                        label: format!("snr{db}"),
                        meas_var: v,
                        avg_snr_db: db,
                    });
                }
                let mut labels: Vec<&str> = out.iter().map(|t| t.label.as_str()).collect();
                labels.sort_unstable();
                labels.dedup();
                if labels.len() != out.len() {
                    return Err(config_err("noise.target_avg_snr_db entries must be distinct"));
                }
                Ok(out)
            }
            (None, None) => Err(config_err(
                "set exactly one of noise.meas_var and noise.target_avg_snr_db (neither is set)",
            )),
            (Some(_), Some(_)) => Err(config_err(
                "set exactly one of noise.meas_var and noise.target_avg_snr_db (both are set)",
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(
            r#"{{
                "noise": {{ "target_avg_snr_db": 23.2 }},
                "record": {{ "num_samples": 1000 }}{extra}
            }}"#
        )
    }

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let cfg = ExperimentConfig::from_json(&minimal("")).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.spec.num_lines(), 49);
        assert_eq!(r.seeds, vec![1]);
        assert_eq!(r.targets.len(), 1);
        assert_eq!(r.targets[0].label, "snr23.2");
        match r.process {
            ProcessNoise::Rank2(p) => {
                assert_eq!(p.sigma_c2, DEFAULT_SIGMA_C2);
                assert_eq!(p.sigma_rf2, DEFAULT_SIGMA_RF2);
            }
            ProcessNoise::Full(_) => panic!("defaults are rank two"),
        }
        let snr = comb::average_snr_db(&r.spec, r.targets[0].meas_var);
        assert!((snr - 23.2).abs() < 1e-9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{
            "noise": { "target_avg_snr_db": 20.0, "sigma_sn": 1.0 },
            "record": { "num_samples": 100 }
        }"#;
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert!(err.to_string().contains("sigma_sn"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn noise_selection_must_be_exclusive() {
        let both = r#"{
            "noise": { "meas_var": 1e-3, "target_avg_snr_db": 20.0 },
            "record": { "num_samples": 100 }
        }"#;
        let err = ExperimentConfig::from_json(both).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("both are set"), "{err}");

        let neither = r#"{
            "record": { "num_samples": 100 }
        }"#;
        let err = ExperimentConfig::from_json(neither).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("neither is set"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn snr_list_produces_one_target_each() {
        let cfg = ExperimentConfig::from_json(&minimal("")).unwrap();
        let mut cfg = cfg;
        cfg.noise.target_avg_snr_db =
            Some(OneOrMany::Many(vec![16.53, 23.2, 29.05]));
        let r = cfg.resolve().unwrap();
        assert_eq!(r.targets.len(), 3);
        for t in &r.targets {
            let snr = comb::average_snr_db(&r.spec, t.meas_var);
            assert!((snr - t.avg_snr_db).abs() < 1e-9, "{} off target", t.label);
        }
        assert!(r.targets[0].meas_var > r.targets[2].meas_var);
    }

    #[test]
    fn half_given_grid_is_rejected() {
        let cfg = ExperimentConfig::from_json(&minimal(
            r#", "comb": { "center_hz": 4.5e9 }"#,
        ))
        .unwrap();
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().contains("given together"), "{err}");
    }

    #[test]
    fn full_covariance_dimension_is_checked() {
        let mut cfg = ExperimentConfig::from_json(&minimal("")).unwrap();
        cfg.comb.half_count = 1;
        cfg.noise.process_cov = Some(vec![vec![1e-6, 0.0], vec![0.0, 1e-6]]);
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().contains("3x3"), "{err}");
    }

    #[test]
    fn shipped_example_configs_resolve() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let cfg = ExperimentConfig::from_path(&path)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.resolve().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
        assert!(seen >= 4, "expected the example configs, found {seen}");
    }

    #[test]
    fn seed_override_replaces_list() {
        let mut cfg = ExperimentConfig::from_json(&minimal("")).unwrap();
        cfg.record.seeds = OneOrMany::Many(vec![4, 5, 6]);
        cfg.apply_overrides(Some(9), Some(Path::new("beta")));
        let r = cfg.resolve().unwrap();
        assert_eq!(r.seeds, vec![9]);
        assert_eq!(r.output_dir, PathBuf::from("beta"));
    }
}
