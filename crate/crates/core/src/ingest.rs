//! Measured VNA S21 sweeps: parsing, averaging, free-space calibration and
//! resampling onto the simulation feature grid.
//!
//! Sweep files are a small CSV dialect. Lines starting with `#` are headers;
//! `# key: value` headers carry metadata (`position`, `session`). Every other
//! non-blank line is `frequency_Hz, real, imag`.
//!
//! ```text
//! # session: north-wall
//! # position: 3
//! 1.395e9, 0.0125, -0.0031
//! 1.442e9, 0.0119, -0.0040
//! ```
//!
//! A measurement session is described by a TOML manifest listing the wall and
//! free-space sweep files recorded at each of the ten receiver positions:
//!
//! ```toml
//! session = "north-wall"
//!
//! [[position]]
//! index = 1
//! wall = ["wall/p01_r001.csv", "wall/p01_r002.csv"]
//! free_space = ["free/p01_r001.csv", "free/p01_r002.csv"]
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fdtd::RECEIVER_COUNT;
use crate::signal::{band_bins, FeatureVector, SignalError, SpectrumRecord, FEATURE_BINS};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}:{line}: {reason}")]
    Parse { file: String, line: usize, reason: String },
    #[error("{file}: {reason}")]
    Format { file: String, reason: String },
    #[error("sweeps are on different frequency grids: {0}")]
    Alignment(String),
    #[error("sweep covers {have_lo:.4e}..{have_hi:.4e} Hz but the feature band needs {need_lo:.4e}..{need_hi:.4e} Hz")]
    Coverage { have_lo: f64, have_hi: f64, need_lo: f64, need_hi: f64 },
    #[error("session: {0}")]
    Session(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// One frequency sweep of the complex transmission coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct VnaSweep {
    /// Strictly increasing (Hz).
    pub frequencies: Vec<f64>,
    pub s21: Vec<Complex64>,
    pub position: Option<usize>,
    pub session: Option<String>,
}

impl VnaSweep {
    pub fn new(frequencies: Vec<f64>, s21: Vec<Complex64>) -> Result<Self, IngestError> {
        let sweep = Self { frequencies, s21, position: None, session: None };
        sweep.check("<memory>")?;
        Ok(sweep)
    }

    fn check(&self, file: &str) -> Result<(), IngestError> {
        let fmt_err = |reason: String| IngestError::Format { file: file.to_string(), reason };
        if self.frequencies.len() != self.s21.len() {
            return Err(fmt_err(format!(
                "{} frequencies but {} values",
                self.frequencies.len(),
                self.s21.len()
            )));
        }
        for (k, pair) in self.frequencies.windows(2).enumerate() {
            if pair[1] == pair[0] {
                return Err(fmt_err(format!("duplicate frequency {} Hz at row {}", pair[1], k + 2)));
            }
            if pair[1] < pair[0] {
                return Err(fmt_err(format!("frequencies decrease at row {}", k + 2)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }
}

/// Parses the sweep CSV dialect. `file` is only used in error messages.
pub fn parse_sweep(text: &str, file: &str) -> Result<VnaSweep, IngestError> {
    let mut sweep = VnaSweep { frequencies: vec![], s21: vec![], position: None, session: None };
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        let parse_err = |reason: String| IngestError::Parse { file: file.to_string(), line: line_no, reason };
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            if let Some((key, value)) = header.split_once([':', '=']) {
                let value = value.trim();
                match key.trim().to_ascii_lowercase().as_str() {
                    "position" => {
                        sweep.position =
                            Some(value.parse().map_err(|_| parse_err(format!("bad position '{value}'")))?)
                    }
                    "session" => sweep.session = Some(value.to_string()),
                    _ => {}
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields (frequency, real, imag), found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| parse_err(format!("'{s}' is not a number")));
        let (f, re, im) = (num(fields[0])?, num(fields[1])?, num(fields[2])?);
        if !(f.is_finite() && re.is_finite() && im.is_finite()) {
            return Err(parse_err("non-finite value".into()));
        }
        sweep.frequencies.push(f);
        sweep.s21.push(Complex64::new(re, im));
    }
    sweep.check(file)?;
    Ok(sweep)
}

pub fn parse_sweep_file(path: &Path) -> Result<VnaSweep, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    parse_sweep(&text, &path.display().to_string())
}

/// Serializes a sweep in the CSV dialect; values round-trip exactly.
pub fn format_sweep(sweep: &VnaSweep) -> String {
    let mut out = String::from("# frequency_Hz, real, imag\n");
    if let Some(s) = &sweep.session {
        let _ = writeln!(out, "# session: {s}");
    }
    if let Some(p) = sweep.position {
        let _ = writeln!(out, "# position: {p}");
    }
    for (f, v) in sweep.frequencies.iter().zip(&sweep.s21) {
        let _ = writeln!(out, "{f:?}, {:?}, {:?}", v.re, v.im);
    }
    out
}

/// Complex mean of repeated sweeps over one frequency grid.
pub fn average_sweeps(group: &[VnaSweep]) -> Result<VnaSweep, IngestError> {
    let first = group.first().ok_or_else(|| IngestError::Alignment("no sweeps to average".into()))?;
    for (k, s) in group.iter().enumerate().skip(1) {
        if s.frequencies != first.frequencies {
            return Err(IngestError::Alignment(format!("sweep {k} differs from sweep 0")));
        }
    }
    let n = group.len() as f64;
    let s21 = (0..first.len())
        .map(|m| group.iter().map(|s| s.s21[m]).sum::<Complex64>() / n)
        .collect();
    Ok(VnaSweep { frequencies: first.frequencies.clone(), s21, position: first.position, session: first.session.clone() })
}

/// Linear interpolation (real and imaginary parts separately) onto the 44
/// feature bins `k * bin_spacing`.
pub fn resample_to_feature_grid(sweep: &VnaSweep, bin_spacing: f64) -> Result<Vec<Complex64>, IngestError> {
    let band = band_bins(bin_spacing);
    let need_lo = band.start as f64 * bin_spacing;
    let need_hi = (band.end - 1) as f64 * bin_spacing;
    let (have_lo, have_hi) = match (sweep.frequencies.first(), sweep.frequencies.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => (f64::NAN, f64::NAN),
    };
    if !(have_lo <= need_lo && have_hi >= need_hi) {
        return Err(IngestError::Coverage { have_lo, have_hi, need_lo, need_hi });
    }
    let f = &sweep.frequencies;
    Ok(band
        .map(|k| {
            let target = k as f64 * bin_spacing;
            let hi = f.partition_point(|&x| x < target);
            if f[hi] == target {
                return sweep.s21[hi];
            }
            let lo = hi - 1;
            let t = (target - f[lo]) / (f[hi] - f[lo]);
            sweep.s21[lo] + (sweep.s21[hi] - sweep.s21[lo]) * t
        })
        .collect())
}

/// Repeated wall and free-space sweeps at one receiver position.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionGroup {
    /// 1-based receiver position.
    pub index: usize,
    pub wall: Vec<VnaSweep>,
    pub free_space: Vec<VnaSweep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSession {
    pub id: String,
    pub positions: Vec<PositionGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session: String,
    #[serde(rename = "position")]
    pub positions: Vec<PositionFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionFiles {
    pub index: usize,
    pub wall: Vec<String>,
    pub free_space: Vec<String>,
}

/// Loads a session manifest and all sweep files it lists (paths relative to
/// the manifest's directory).
pub fn load_session(manifest_path: &Path) -> Result<MeasurementSession, IngestError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|source| IngestError::Io { path: manifest_path.to_path_buf(), source })?;
    let manifest: SessionManifest =
        toml::from_str(&text).map_err(|e| IngestError::Session(format!("{}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let read = |files: &[String]| files.iter().map(|f| parse_sweep_file(&base.join(f))).collect::<Result<Vec<_>, _>>();
    let positions = manifest
        .positions
        .iter()
        .map(|p| Ok(PositionGroup { index: p.index, wall: read(&p.wall)?, free_space: read(&p.free_space)? }))
        .collect::<Result<_, IngestError>>()?;
    Ok(MeasurementSession { id: manifest.session, positions })
}

/// Writes simulated wall and free-space spectra as one sweep file per
/// receiver position plus a `session.toml` manifest, covering the feature
/// band with `margin` extra bins on each side. Returns the manifest path.
pub fn export_session(
    dir: &Path,
    id: &str,
    wall: &SpectrumRecord,
    free_space: &SpectrumRecord,
    margin: usize,
) -> Result<PathBuf, IngestError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IngestError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let band = band_bins(wall.bin_spacing);
    let bins: Vec<usize> = (band.start.saturating_sub(margin)..band.end + margin)
        .filter(|&k| k >= wall.first_bin && k - wall.first_bin < wall.bin_count())
        .collect();
    let mut positions = Vec::new();
    for (r, (w, f)) in wall.receivers.iter().zip(&free_space.receivers).enumerate() {
        let index = r + 1;
        let mut files = Vec::new();
        for (tag, spectrum) in [("wall", w), ("free", f)] {
            let mut sweep = VnaSweep::new(
                bins.iter().map(|&k| wall.frequency(k)).collect(),
                bins.iter().map(|&k| spectrum[k - wall.first_bin]).collect(),
            )?;
            sweep.session = Some(id.to_string());
            sweep.position = Some(index);
            let name = format!("{tag}_p{index:02}.csv");
            let path = dir.join(&name);
            fs::write(&path, format_sweep(&sweep)).map_err(io(&path))?;
            files.push(name);
        }
        let free = files.pop().expect("two files");
        positions.push(PositionFiles { index, wall: files, free_space: vec![free] });
    }
    let manifest = SessionManifest { session: id.to_string(), positions };
    let path = dir.join("session.toml");
    let text = toml::to_string(&manifest).map_err(|e| IngestError::Session(e.to_string()))?;
    fs::write(&path, text).map_err(io(&path))?;
    Ok(path)
}

/// Average, resample, subtract free space and lay out as features.
pub fn session_to_features(session: &MeasurementSession, bin_spacing: f64) -> Result<FeatureVector, IngestError> {
    let mut ordered: Vec<Option<&PositionGroup>> = vec![None; RECEIVER_COUNT];
    for p in &session.positions {
        if p.index == 0 || p.index > RECEIVER_COUNT {
            return Err(IngestError::Session(format!("position {} outside 1..={RECEIVER_COUNT}", p.index)));
        }
        if ordered[p.index - 1].replace(p).is_some() {
            return Err(IngestError::Session(format!("position {} listed twice", p.index)));
        }
    }
    if let Some(missing) = ordered.iter().position(Option::is_none) {
        return Err(IngestError::Session(format!("missing position {}", missing + 1)));
    }
    let groups: Vec<&PositionGroup> = ordered.into_iter().flatten().collect();
    let repeats = (groups[0].wall.len(), groups[0].free_space.len());
    for g in &groups {
        if g.wall.is_empty() || g.free_space.is_empty() {
            return Err(IngestError::Session(format!("position {} has no sweeps", g.index)));
        }
        if (g.wall.len(), g.free_space.len()) != repeats {
            return Err(IngestError::Session(format!(
                "position {} has {}/{} repeats, position 1 has {}/{}",
                g.index,
                g.wall.len(),
                g.free_space.len(),
                repeats.0,
                repeats.1
            )));
        }
    }
    let band = groups
        .iter()
        .map(|g| {
            let wall = resample_to_feature_grid(&average_sweeps(&g.wall)?, bin_spacing)?;
            let free = resample_to_feature_grid(&average_sweeps(&g.free_space)?, bin_spacing)?;
            debug_assert_eq!(wall.len(), FEATURE_BINS);
            Ok(wall.iter().zip(&free).map(|(a, b)| a - b).collect())
        })
        .collect::<Result<Vec<Vec<Complex64>>, IngestError>>()?;
    Ok(FeatureVector::from_complex(&band)?)
}
