//! Dataset generation over all wall cases, the on-disk container and
//! stratified train/validation/test splits.
//!
//! A dataset directory holds `manifest.json` and one blob per sample under
//! `samples/`. Each blob is the little-endian `f32` features (880), dielectric
//! raster (1024) and conductivity raster (1024), followed by the CRC-32C of
//! those bytes (little-endian `u32`).

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fdtd::{run_simulation, FdtdError, SimConfig};
use crate::scene::{
    build_material_grid, enumerate_cases, rasterize_labels, CaseId, ProfileKind, ProfileRaster, SceneError,
    WallSpec, WallType, EPS_MAX, RASTER_LEN, SIGMA_FLOOR, SIGMA_MAX,
};
use crate::signal::{assemble_features, calibrate, FeatureVector, SignalError, SpectrumRecord, FEATURE_LEN};

/// Container format version written by this crate.
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLE_DIR: &str = "samples";

const PAYLOAD_BYTES: usize = 4 * (FEATURE_LEN + 2 * RASTER_LEN);
const BLOB_BYTES: usize = PAYLOAD_BYTES + 4;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{case}: simulation failed: {source}")]
    Simulation { case: CaseId, source: FdtdError },
    #[error("{case}: {source}")]
    Scene { case: CaseId, source: SceneError },
    #[error("{case}: {source}")]
    Signal { case: CaseId, source: SignalError },
    #[error("free-space reference: {0}")]
    Reference(String),
    #[error("dataset format version {found} is not supported (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("{case}: integrity check failed at byte offset {offset}: {reason}")]
    Integrity { case: CaseId, offset: u64, reason: String },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("split configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// reader never observes a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// One simulated wall case with its network input and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub spec: WallSpec,
    pub features: FeatureVector,
    pub dielectric: ProfileRaster,
    pub conductivity: ProfileRaster,
}

impl Sample {
    pub fn case_id(&self) -> CaseId {
        self.spec.case_id
    }

    pub fn label(&self, kind: ProfileKind) -> &ProfileRaster {
        match kind {
            ProfileKind::Dielectric => &self.dielectric,
            ProfileKind::Conductivity => &self.conductivity,
        }
    }

    /// Payload plus CRC-32C suffix.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BLOB_BYTES);
        for v in self.features.as_slice().iter().chain(&self.dielectric.pixels).chain(&self.conductivity.pixels) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32c::crc32c(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_blob(spec: WallSpec, bytes: &[u8]) -> Result<Self, DatasetError> {
        let case = spec.case_id;
        if bytes.len() != BLOB_BYTES {
            return Err(DatasetError::Integrity {
                case,
                offset: bytes.len().min(BLOB_BYTES) as u64,
                reason: format!("blob is {} bytes, expected {BLOB_BYTES}", bytes.len()),
            });
        }
        let (payload, tail) = bytes.split_at(PAYLOAD_BYTES);
        let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
        let actual = crc32c::crc32c(payload);
        if stored != actual {
            return Err(DatasetError::Integrity {
                case,
                offset: PAYLOAD_BYTES as u64,
                reason: format!("CRC-32C mismatch (stored {stored:08x}, computed {actual:08x})"),
            });
        }
        let floats: Vec<f32> =
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let (features, rest) = floats.split_at(FEATURE_LEN);
        let (eps, sigma) = rest.split_at(RASTER_LEN);
        Ok(Self {
            spec,
            features: FeatureVector::new(features.to_vec()).expect("fixed length"),
            dielectric: ProfileRaster { kind: ProfileKind::Dielectric, pixels: eps.to_vec() },
            conductivity: ProfileRaster { kind: ProfileKind::Conductivity, pixels: sigma.to_vec() },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstants {
    pub eps_max: f64,
    pub sigma_floor: f64,
    pub sigma_max: f64,
}

impl Default for NormalizationConstants {
    fn default() -> Self {
        Self { eps_max: EPS_MAX, sigma_floor: SIGMA_FLOOR, sigma_max: SIGMA_MAX }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub spec: WallSpec,
    /// Blob path relative to the dataset directory.
    pub file: String,
    /// Byte offset of this blob in the concatenation of all blobs in manifest order.
    pub offset: u64,
    pub length: u64,
    pub crc32c: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub sim_config_digest: String,
    pub sim_config: SimConfig,
    pub normalization: NormalizationConstants,
    /// Order of the arrays inside each blob.
    pub blob_layout: Vec<String>,
    pub created_by: String,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    fn new(cfg: &SimConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            sim_config_digest: cfg.digest(),
            sim_config: cfg.clone(),
            normalization: NormalizationConstants::default(),
            blob_layout: vec![
                format!("features f32le x{FEATURE_LEN}"),
                format!("dielectric f32le x{RASTER_LEN}"),
                format!("conductivity f32le x{RASTER_LEN}"),
                "crc32c u32le".to_string(),
            ],
            created_by: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            samples: Vec::new(),
        }
    }

    pub fn wall_types(&self) -> Vec<WallType> {
        self.samples.iter().map(|e| e.spec.wall_type()).collect()
    }

    fn check(&self) -> Result<(), DatasetError> {
        for pair in self.samples.windows(2) {
            if pair[1].offset <= pair[0].offset {
                return Err(DatasetError::Manifest(format!(
                    "offsets not strictly increasing at {}",
                    pair[1].spec.case_id
                )));
            }
        }
        Ok(())
    }
}

fn blob_name(case: CaseId) -> String {
    format!("{SAMPLE_DIR}/{case}.bin")
}

/// Calibrated spectra of the shared free-space run.
pub fn free_space_reference(cfg: &SimConfig) -> Result<SpectrumRecord, DatasetError> {
    let grid = crate::scene::MaterialGrid::free_space(cfg);
    let traces = run_simulation(&grid, cfg).map_err(|e| DatasetError::Reference(e.to_string()))?;
    Ok(SpectrumRecord::from_traces(&traces))
}

/// Uncalibrated receiver spectra of one wall case.
pub fn simulate_spectrum(spec: &WallSpec, cfg: &SimConfig) -> Result<SpectrumRecord, DatasetError> {
    let case = spec.case_id;
    let grid = build_material_grid(spec, cfg).map_err(|source| DatasetError::Scene { case, source })?;
    let traces = run_simulation(&grid, cfg).map_err(|source| DatasetError::Simulation { case, source })?;
    Ok(SpectrumRecord::from_traces(&traces))
}

/// Simulates one wall case and turns it into a [`Sample`].
pub fn simulate_case(spec: &WallSpec, cfg: &SimConfig, free_space: &SpectrumRecord) -> Result<Sample, DatasetError> {
    let case = spec.case_id;
    let wall = simulate_spectrum(spec, cfg)?;
    let calibrated = calibrate(&wall, free_space).map_err(|source| DatasetError::Signal { case, source })?;
    let features = assemble_features(&calibrated).map_err(|source| DatasetError::Signal { case, source })?;
    let (dielectric, conductivity) = rasterize_labels(spec);
    Ok(Sample { spec: *spec, features, dielectric, conductivity })
}

/// Simulates `cases` on `workers` threads and hands each finished sample, in
/// completion order, to `commit`. Results do not depend on the worker count.
pub fn simulate_cases(
    cfg: &SimConfig,
    cases: &[WallSpec],
    workers: usize,
    mut commit: impl FnMut(usize, Sample) -> Result<(), DatasetError>,
) -> Result<(), DatasetError> {
    let free_space = free_space_reference(cfg)?;
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<Sample, DatasetError>)>();
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            let tx = tx.clone();
            let (next, stop, free_space) = (&next, &stop, &free_space);
            scope.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = cases.get(k) else { break };
                let result = simulate_case(spec, cfg, free_space);
                if tx.send((k, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut outcome = Ok(());
        for (k, result) in rx {
            if outcome.is_err() {
                continue;
            }
            outcome = result.and_then(|sample| commit(k, sample));
            if outcome.is_err() {
                stop.store(true, Ordering::Relaxed);
            }
        }
        outcome
    })
}

/// Runs the full simulation campaign into `out` and writes the manifest.
///
/// `progress` is called after each committed sample with `(done, total)`.
pub fn generate_dataset(
    cfg: &SimConfig,
    out: &Path,
    workers: usize,
    progress: impl Fn(usize, usize),
) -> Result<DatasetManifest, DatasetError> {
    generate_subset(cfg, &enumerate_cases(), out, workers, progress)
}

/// [`generate_dataset`] restricted to a list of cases.
pub fn generate_subset(
    cfg: &SimConfig,
    cases: &[WallSpec],
    out: &Path,
    workers: usize,
    progress: impl Fn(usize, usize),
) -> Result<DatasetManifest, DatasetError> {
    let sample_dir = out.join(SAMPLE_DIR);
    fs::create_dir_all(&sample_dir).map_err(io_err(&sample_dir))?;
    let mut crcs: Vec<Option<u32>> = vec![None; cases.len()];
    let mut done = 0;
    simulate_cases(cfg, cases, workers, |k, sample| {
        let blob = sample.to_blob();
        let path = out.join(blob_name(sample.case_id()));
        write_atomic(&path, &blob).map_err(io_err(&path))?;
        crcs[k] = Some(u32::from_le_bytes(blob[PAYLOAD_BYTES..].try_into().expect("crc")));
        done += 1;
        progress(done, cases.len());
        Ok(())
    })?;
    let mut manifest = DatasetManifest::new(cfg);
    for (k, (spec, crc)) in cases.iter().zip(crcs).enumerate() {
        let crc = crc.ok_or_else(|| DatasetError::Manifest(format!("{} was never committed", spec.case_id)))?;
        manifest.samples.push(ManifestEntry {
            spec: *spec,
            file: blob_name(spec.case_id),
            offset: (k * BLOB_BYTES) as u64,
            length: BLOB_BYTES as u64,
            crc32c: crc,
        });
    }
    write_manifest(out, &manifest)?;
    Ok(manifest)
}

fn write_manifest(out: &Path, manifest: &DatasetManifest) -> Result<(), DatasetError> {
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_atomic(&path, text.as_bytes()).map_err(io_err(&path))
}

/// Writes samples that are already in memory.
pub fn save_dataset(out: &Path, cfg: &SimConfig, samples: &[Sample]) -> Result<DatasetManifest, DatasetError> {
    let sample_dir = out.join(SAMPLE_DIR);
    fs::create_dir_all(&sample_dir).map_err(io_err(&sample_dir))?;
    let mut manifest = DatasetManifest::new(cfg);
    for (k, sample) in samples.iter().enumerate() {
        let blob = sample.to_blob();
        let file = blob_name(sample.case_id());
        let path = out.join(&file);
        write_atomic(&path, &blob).map_err(io_err(&path))?;
        manifest.samples.push(ManifestEntry {
            spec: sample.spec,
            file,
            offset: (k * BLOB_BYTES) as u64,
            length: BLOB_BYTES as u64,
            crc32c: u32::from_le_bytes(blob[PAYLOAD_BYTES..].try_into().expect("crc")),
        });
    }
    write_manifest(out, &manifest)?;
    Ok(manifest)
}

/// Reads only the manifest, checking the format version.
pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    let found = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| DatasetError::Manifest("missing format_version".into()))? as u32;
    if found != FORMAT_VERSION {
        return Err(DatasetError::UnsupportedVersion { found, supported: FORMAT_VERSION });
    }
    let manifest: DatasetManifest = serde_json::from_value(raw).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    manifest.check()?;
    Ok(manifest)
}

/// Loads and verifies every sample of a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Sample>), DatasetError> {
    let manifest = load_manifest(dir)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if bytes.len() as u64 != entry.length {
            return Err(DatasetError::Integrity {
                case: entry.spec.case_id,
                offset: entry.offset + bytes.len().min(entry.length as usize) as u64,
                reason: format!("blob is {} bytes, manifest says {}", bytes.len(), entry.length),
            });
        }
        samples.push(Sample::from_blob(entry.spec, &bytes).map_err(|e| match e {
            DatasetError::Integrity { case, offset, reason } => {
                DatasetError::Integrity { case, offset: entry.offset + offset, reason }
            }
            other => other,
        })?);
    }
    Ok((manifest, samples))
}

/// Named index lists into a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    /// `(train, validation, test)`.
    pub fractions: (f64, f64, f64),
}

/// Largest-remainder apportionment of `total` over groups proportional to `sizes`.
fn apportion(total: usize, sizes: &[usize], fraction: f64) -> Vec<usize> {
    let quotas: Vec<f64> = sizes.iter().map(|&n| fraction * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = total.saturating_sub(counts.iter().sum());
    for &g in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if counts[g] < sizes[g] {
            counts[g] += 1;
            missing -= 1;
        }
    }
    counts
}

/// Stratified split of samples labelled by wall type.
///
/// Validation and test sizes are `floor(fraction * N)` overall, spread over
/// the wall types by largest remainder. When the fractions sum to one the
/// training split takes everything left over; otherwise it is sized like the
/// other two.
pub fn split_by_type(
    types: &[WallType],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Split, DatasetError> {
    let (f_train, f_val, f_test) = fractions;
    if [f_train, f_val, f_test].iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(DatasetError::Config(format!("fractions must be non-negative: {fractions:?}")));
    }
    let sum = f_train + f_val + f_test;
    if sum > 1.0 + 1e-9 {
        return Err(DatasetError::Config(format!("fractions sum to {sum} > 1")));
    }
    let n = types.len();
    let groups: Vec<Vec<usize>> =
        WallType::ALL.iter().map(|t| (0..n).filter(|&k| types[k] == *t).collect()).collect();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let count = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
    let val = apportion(count(f_val), &sizes, f_val);
    let test = apportion(count(f_test), &sizes, f_test);
    let train: Vec<usize> = if (sum - 1.0).abs() < 1e-9 {
        sizes.iter().zip(val.iter().zip(&test)).map(|(s, (v, t))| s - v - t).collect()
    } else {
        apportion(count(f_train), &sizes, f_train)
    };
    for (name, f, parts) in [("train", f_train, &train), ("validation", f_val, &val), ("test", f_test, &test)] {
        if f > 0.0 && parts.iter().sum::<usize>() == 0 {
            return Err(DatasetError::Config(format!("{name} fraction {f} selects no samples out of {n}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split { train: vec![], validation: vec![], test: vec![], seed, fractions };
    for (g, mut members) in groups.into_iter().enumerate() {
        members.shuffle(&mut rng);
        let (v, rest) = members.split_at(val[g]);
        let (t, rest) = rest.split_at(test[g]);
        split.validation.extend_from_slice(v);
        split.test.extend_from_slice(t);
        split.train.extend_from_slice(&rest[..train[g].min(rest.len())]);
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Stratified split of a dataset.
pub fn split(manifest: &DatasetManifest, fractions: (f64, f64, f64), seed: u64) -> Result<Split, DatasetError> {
    split_by_type(&manifest.wall_types(), fractions, seed)
}
