//! Binary record formats and small text-output helpers.
//!
//! Both formats share one layout: a five-byte magic tag, a little-endian
//! u32 byte length, a UTF-8 JSON header of that length, then the payload as
//! little-endian IEEE-754 doubles. Readers validate the header against the
//! payload so truncation is caught before any number is trusted.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use combtrack_core::comb::{PhaseTrajectories, SignalRecord};

use crate::{CliError, Result};

/// Tag of a sampled photocurrent record.
pub const SIGNAL_MAGIC: &[u8; 5] = b"DCSR1";
/// Tag of a phase-trajectory record.
pub const PHASE_MAGIC: &[u8; 5] = b"DCPT1";

/// Signal-file header. Unknown extra keys are tolerated on read so files
/// annotated by other tools stay ingestible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalHeader {
    pub fs_hz: f64,
    pub num_samples: u64,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Phase-file header; the payload is row major, one row per sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseHeader {
    pub fs_hz: f64,
    pub num_samples: u64,
    pub line_indices: Vec<i32>,
    pub guard: u64,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, detail: impl Into<String>) -> CliError {
    CliError::Format { path: path.to_path_buf(), detail: detail.into() }
}

fn write_record(path: &Path, magic: &[u8; 5], header_json: &str, payload: &[f64]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    let header = header_json.as_bytes();
    let len = u32::try_from(header.len())
        .map_err(|_| format_err(path, "header does not fit the length prefix"))?;
    let mut buf = Vec::with_capacity(magic.len() + 4 + header.len() + payload.len() * 8);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(header);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Reads magic + header and returns the parsed header JSON plus the payload
/// bytes that follow it.
fn read_record(path: &Path, magic: &[u8; 5]) -> Result<(String, Vec<u8>)> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut tag = [0u8; 5];
    file.read_exact(&mut tag)
        .map_err(|_| format_err(path, "file too short for a format tag"))?;
    if &tag != magic {
        let want = String::from_utf8_lossy(magic).into_owned();
        let got = String::from_utf8_lossy(&tag).into_owned();
        return Err(format_err(path, format!("bad magic: expected {want:?}, got {got:?}")));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)
        .map_err(|_| format_err(path, "file too short for the header length"))?;
    let len = u32::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; len];
    file.read_exact(&mut header)
        .map_err(|_| format_err(path, "file too short for the declared header"))?;
    let header = String::from_utf8(header)
        .map_err(|_| format_err(path, "header is not valid UTF-8"))?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(|e| io_err(path, e))?;
    Ok((header, payload))
}

fn payload_to_f64(path: &Path, bytes: &[u8], want: usize, what: &str) -> Result<Vec<f64>> {
    let need = want * 8;
    if bytes.len() < need {
        return Err(format_err(
            path,
            format!(
                "payload shorter than header {what} (need {need} bytes, got {})",
                bytes.len()
            ),
        ));
    }
    if bytes.len() > need {
        return Err(format_err(
            path,
            format!(
                "payload longer than header {what} (expected {need} bytes, got {})",
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
        .collect())
}

/// Writes a signal record; `source` documents how the samples were made.
pub fn write_signal(record: &SignalRecord, source: &str, path: &Path) -> Result<()> {
    let header = SignalHeader {
        fs_hz: record.sample_rate,
        num_samples: record.samples.len() as u64,
        source: source.to_string(),
        seed: record.seed,
    };
    let json = serde_json::to_string(&header).expect("header serializes");
    write_record(path, SIGNAL_MAGIC, &json, record.samples.as_slice().expect("contiguous"))
}

/// Reads a signal record back; the samples round-trip bitwise.
pub fn read_signal(path: &Path) -> Result<SignalRecord> {
    let (header, payload) = read_record(path, SIGNAL_MAGIC)?;
    let header: SignalHeader =
        serde_json::from_str(&header).map_err(|e| format_err(path, format!("header: {e}")))?;
    if !(header.fs_hz.is_finite() && header.fs_hz > 0.0) {
        return Err(format_err(
            path,
            format!("header field fs_hz must be positive, got {}", header.fs_hz),
        ));
    }
    let n = usize::try_from(header.num_samples)
        .map_err(|_| format_err(path, "header num_samples overflows this platform"))?;
    let samples = payload_to_f64(path, &payload, n, "num_samples")?;
    Ok(SignalRecord {
        samples: Array1::from_vec(samples),
        sample_rate: header.fs_hz,
        truth: None,
        seed: header.seed,
    })
}

/// Writes phase trajectories with their guard and line indexing.
pub fn write_phases(
    traj: &PhaseTrajectories,
    source: &str,
    seed: Option<u64>,
    path: &Path,
) -> Result<()> {
    let header = PhaseHeader {
        fs_hz: traj.sample_rate,
        num_samples: traj.num_samples() as u64,
        line_indices: traj.line_indices.clone(),
        guard: traj.guard as u64,
        source: source.to_string(),
        seed,
    };
    let json = serde_json::to_string(&header).expect("header serializes");
    let flat: Vec<f64> = traj.phases.iter().copied().collect();
    write_record(path, PHASE_MAGIC, &json, &flat)
}

pub fn read_phases(path: &Path) -> Result<PhaseTrajectories> {
    let (header, payload) = read_record(path, PHASE_MAGIC)?;
    let header: PhaseHeader =
        serde_json::from_str(&header).map_err(|e| format_err(path, format!("header: {e}")))?;
    if !(header.fs_hz.is_finite() && header.fs_hz > 0.0) {
        return Err(format_err(
            path,
            format!("header field fs_hz must be positive, got {}", header.fs_hz),
        ));
    }
    let k = usize::try_from(header.num_samples)
        .map_err(|_| format_err(path, "header num_samples overflows this platform"))?;
    let m = header.line_indices.len();
    let flat = payload_to_f64(path, &payload, k * m, "num_samples")?;
    let phases = Array2::from_shape_vec((k, m), flat).expect("length checked");
    PhaseTrajectories::new(phases, header.fs_hz, header.line_indices, header.guard as usize)
        .map_err(CliError::from)
}

/// CSV rendering of a square matrix indexed by comb lines, matching the
/// correlation-matrix layout: an index header row, then one row per line.
pub fn matrix_csv(line_indices: &[i32], values: &Array2<f64>) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("line_index");
    for m in line_indices {
        write!(out, ",{m}").expect("string write cannot fail");
    }
    out.push('\n');
    for (i, m) in line_indices.iter().enumerate() {
        write!(out, "{m}").expect("string write cannot fail");
        for j in 0..line_indices.len() {
            write!(out, ",{}", values[[i, j]]).expect("string write cannot fail");
        }
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("combtrack-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn signal_round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let record = SignalRecord {
            samples: Array1::from_vec(samples),
            sample_rate: 1e10,
            truth: None,
            seed: Some(7),
        };
        let path = tmp("roundtrip.dcsr");
        write_signal(&record, "test", &path).unwrap();
        let back = read_signal(&path).unwrap();
        assert_eq!(back.samples.len(), 1000);
        assert_eq!(back.sample_rate, 1e10);
        assert_eq!(back.seed, Some(7));
        for (a, b) in record.samples.iter().zip(back.samples.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_payload_is_reported() {
        let record = SignalRecord {
            samples: Array1::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
            sample_rate: 1e9,
            truth: None,
            seed: None,
        };
        let path = tmp("truncated.dcsr");
        write_signal(&record, "test", &path).unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 9]).unwrap();
        let err = read_signal(&path).unwrap_err();
        assert!(
            err.to_string().contains("payload shorter than header num_samples"),
            "{err}"
        );
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn bad_magic_is_reported() {
        let path = tmp("magic.dcsr");
        fs::write(&path, b"NOPE!junk").unwrap();
        let err = read_signal(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn nonpositive_sample_rate_names_the_field() {
        let header = r#"{"fs_hz":0.0,"num_samples":2,"source":"test"}"#;
        let path = tmp("fs.dcsr");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(SIGNAL_MAGIC);
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        bytes.extend_from_slice(&2.0f64.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = read_signal(&path).unwrap_err();
        assert!(err.to_string().contains("fs_hz"), "{err}");
    }

    #[test]
    fn phases_round_trip_preserves_guard_and_indices() {
        let phases = Array2::from_shape_fn((40, 3), |(k, j)| (k * 3 + j) as f64 * 0.01);
        let traj = PhaseTrajectories::new(phases, 2e9, vec![-1, 0, 1], 4).unwrap();
        let path = tmp("phases.dcpt");
        write_phases(&traj, "test", Some(3), &path).unwrap();
        let back = read_phases(&path).unwrap();
        assert_eq!(back.line_indices, vec![-1, 0, 1]);
        assert_eq!(back.guard, 4);
        assert_eq!(back.sample_rate, 2e9);
        for (a, b) in traj.phases.iter().zip(back.phases.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn matrix_csv_layout_matches_correlation_output() {
        let m = Array2::from_shape_vec((2, 2), vec![1.0, 0.25, 0.25, 1.0]).unwrap();
        let csv = matrix_csv(&[-1, 1], &m);
        assert_eq!(csv, "line_index,-1,1\n-1,1,0.25\n1,0.25,1\n");
    }
}
