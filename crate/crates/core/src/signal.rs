//! Probe traces to spectra, free-space calibration and feature assembly.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fdtd::{ProbeTrace, RECEIVER_COUNT};

/// Frequency bins kept per receiver.
pub const FEATURE_BINS: usize = 44;
/// Lower edge of the feature band (Hz); the first bin is the nearest one.
pub const BAND_START_HZ: f64 = 1.4e9;
/// Length of the network input vector.
pub const FEATURE_LEN: usize = 2 * RECEIVER_COUNT * FEATURE_BINS;

const _: () = assert!(FEATURE_LEN == 880);

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("spectra are on different grids: {0}")]
    Calibration(String),
    #[error("band needs bins {first}..{end} but the record holds bins {have_first}..{have_end}")]
    Band { first: usize, end: usize, have_first: usize, have_end: usize },
    #[error("expected {expected} receivers, got {got}")]
    Receivers { expected: usize, got: usize },
    #[error("feature vector has length {0}, expected 880")]
    FeatureLength(usize),
}

/// Unnormalized DFT of a full trace: `X[k] = sum_n x[n] exp(-2 pi i k n / N)`.
pub fn to_spectrum(trace: &ProbeTrace) -> Vec<Complex64> {
    dft(&trace.samples)
}

pub fn dft(samples: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if buf.is_empty() {
        return buf;
    }
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Complex spectra of all receivers on a common bin grid.
///
/// `receivers[r][m]` is the value at frequency `(first_bin + m) * bin_spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    /// Bin spacing (Hz), the reciprocal of the record length.
    pub bin_spacing: f64,
    pub first_bin: usize,
    pub receivers: Vec<Vec<Complex64>>,
}

impl SpectrumRecord {
    /// Full-record spectra of a set of probe traces.
    pub fn from_traces(traces: &[ProbeTrace]) -> Self {
        let (n, dt) = traces.first().map_or((0, 1.0), |t| (t.samples.len(), t.dt));
        Self { bin_spacing: 1.0 / (n as f64 * dt), first_bin: 0, receivers: traces.iter().map(to_spectrum).collect() }
    }

    pub fn bin_count(&self) -> usize {
        self.receivers.first().map_or(0, Vec::len)
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_spacing
    }
}

/// First bin of the feature band for a given spacing.
pub fn band_first_bin(bin_spacing: f64) -> usize {
    (BAND_START_HZ / bin_spacing).round() as usize
}

/// Bin indices of the feature band.
pub fn band_bins(bin_spacing: f64) -> std::ops::Range<usize> {
    let first = band_first_bin(bin_spacing);
    first..first + FEATURE_BINS
}

/// Removes direct coupling: per-bin `wall - free_space`.
pub fn calibrate(wall: &SpectrumRecord, free_space: &SpectrumRecord) -> Result<SpectrumRecord, SignalError> {
    if wall.bin_spacing != free_space.bin_spacing || wall.first_bin != free_space.first_bin {
        return Err(SignalError::Calibration(format!(
            "spacing/first bin {}/{} vs {}/{}",
            wall.bin_spacing, wall.first_bin, free_space.bin_spacing, free_space.first_bin
        )));
    }
    if wall.receivers.len() != free_space.receivers.len() {
        return Err(SignalError::Calibration(format!(
            "{} receivers vs {}",
            wall.receivers.len(),
            free_space.receivers.len()
        )));
    }
    let receivers = wall
        .receivers
        .iter()
        .zip(&free_space.receivers)
        .enumerate()
        .map(|(r, (a, b))| {
            if a.len() != b.len() {
                return Err(SignalError::Calibration(format!("receiver {r}: {} bins vs {}", a.len(), b.len())));
            }
            Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
        })
        .collect::<Result<_, _>>()?;
    Ok(SpectrumRecord { bin_spacing: wall.bin_spacing, first_bin: wall.first_bin, receivers })
}

/// The 880-element network input.
///
/// Layout: for receivers 1..10 in order, the real parts of the 44 band bins;
/// then, again for receivers 1..10, the imaginary parts. Values are kept at
/// the `f32` precision they are persisted with.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<Self, SignalError> {
        if values.len() != FEATURE_LEN {
            return Err(SignalError::FeatureLength(values.len()));
        }
        Ok(Self(values))
    }

    pub fn zeros() -> Self {
        Self(vec![0.0; FEATURE_LEN])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    /// Reconstructs the per-receiver complex band values.
    pub fn to_complex(&self) -> Vec<Vec<Complex64>> {
        let half = RECEIVER_COUNT * FEATURE_BINS;
        (0..RECEIVER_COUNT)
            .map(|r| {
                (0..FEATURE_BINS)
                    .map(|m| {
                        let k = r * FEATURE_BINS + m;
                        Complex64::new(self.0[k] as f64, self.0[half + k] as f64)
                    })
                    .collect()
            })
            .collect()
    }

    /// Inverse of [`FeatureVector::to_complex`].
    pub fn from_complex(band: &[Vec<Complex64>]) -> Result<Self, SignalError> {
        if band.len() != RECEIVER_COUNT {
            return Err(SignalError::Receivers { expected: RECEIVER_COUNT, got: band.len() });
        }
        let half = RECEIVER_COUNT * FEATURE_BINS;
        let mut out = vec![0f32; FEATURE_LEN];
        for (r, bins) in band.iter().enumerate() {
            if bins.len() != FEATURE_BINS {
                return Err(SignalError::FeatureLength(bins.len() * 2 * RECEIVER_COUNT));
            }
            for (m, v) in bins.iter().enumerate() {
                out[r * FEATURE_BINS + m] = v.re as f32;
                out[half + r * FEATURE_BINS + m] = v.im as f32;
            }
        }
        Ok(Self(out))
    }
}

/// Selects the 44-bin band of a calibrated record and lays it out as a
/// [`FeatureVector`].
pub fn assemble_features(record: &SpectrumRecord) -> Result<FeatureVector, SignalError> {
    if record.receivers.len() != RECEIVER_COUNT {
        return Err(SignalError::Receivers { expected: RECEIVER_COUNT, got: record.receivers.len() });
    }
    let band = band_bins(record.bin_spacing);
    let have = record.first_bin..record.first_bin + record.bin_count();
    if band.start < have.start || band.end > have.end {
        return Err(SignalError::Band {
            first: band.start,
            end: band.end,
            have_first: have.start,
            have_end: have.end,
        });
    }
    let lo = band.start - record.first_bin;
    let selected: Vec<Vec<Complex64>> =
        record.receivers.iter().map(|r| r[lo..lo + FEATURE_BINS].to_vec()).collect();
    FeatureVector::from_complex(&selected)
}

/// Optional amplitude bridge between simulated and measured inputs, applied
/// per sample before standardization (identically at training time).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeScaling {
    /// Features are used as they are.
    #[default]
    None,
    /// Every sample is divided by its largest complex band magnitude.
    PeakMagnitude,
}

impl AmplitudeScaling {
    pub fn apply(self, x: &FeatureVector) -> FeatureVector {
        match self {
            AmplitudeScaling::None => x.clone(),
            AmplitudeScaling::PeakMagnitude => {
                let half = FEATURE_LEN / 2;
                let (re, im) = x.0.split_at(half);
                let peak = re.iter().zip(im).fold(0f64, |m, (&a, &b)| m.max((a as f64).hypot(b as f64)));
                if peak == 0.0 {
                    return x.clone();
                }
                FeatureVector(x.0.iter().map(|&v| (v as f64 / peak) as f32).collect())
            }
        }
    }
}

/// Smallest allowed per-dimension scale.
pub const SCALE_FLOOR: f64 = 1e-12;

/// Per-dimension standardization statistics from a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureStats {
    /// Mean and population standard deviation of each dimension.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a FeatureVector>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0f64; FEATURE_LEN];
        let mut sq = vec![0f64; FEATURE_LEN];
        let rows: Vec<&FeatureVector> = samples.into_iter().collect();
        for x in &rows {
            n += 1;
            for (s, &v) in sum.iter_mut().zip(x.as_slice()) {
                *s += v as f64;
            }
        }
        let n_f = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n_f).collect();
        for x in &rows {
            for ((q, &v), m) in sq.iter_mut().zip(x.as_slice()).zip(&mean) {
                let d = v as f64 - m;
                *q += d * d;
            }
        }
        let scale = sq.iter().map(|q| (q / n_f).sqrt().max(SCALE_FLOOR)).collect();
        Self { mean, scale }
    }

    pub fn identity() -> Self {
        Self { mean: vec![0.0; FEATURE_LEN], scale: vec![1.0; FEATURE_LEN] }
    }

    /// `(x - mean) / scale` per dimension, in `f64`.
    pub fn standardize(&self, x: &FeatureVector) -> Vec<f64> {
        x.as_slice()
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (m, s))| (v as f64 - m) / s.max(SCALE_FLOOR))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn trace(samples: Vec<f64>) -> ProbeTrace {
        ProbeTrace { rx_index: 0, dt: 0.02e-9, samples }
    }

    #[test]
    fn sinusoid_on_a_bin_concentrates() {
        let n = 1075;
        let k = 52;
        let x: Vec<f64> = (0..n).map(|t| (2.0 * PI * k as f64 * t as f64 / n as f64).cos()).collect();
        let spec = to_spectrum(&trace(x));
        let peak = spec[k].norm();
        assert!((peak - n as f64 / 2.0).abs() < 1e-8);
        for (m, v) in spec.iter().enumerate() {
            if m != k && m != n - k {
                assert!(v.norm() < 1e-9 * peak, "bin {m}");
            }
        }
    }

    #[test]
    fn zero_trace_gives_zero_spectrum() {
        assert!(to_spectrum(&trace(vec![0.0; 64])).iter().all(|v| v.norm() == 0.0));
    }

    proptest! {
        #[test]
        fn parseval(x in proptest::collection::vec(-1e3f64..1e3, 2..300)) {
            let spec = dft(&x);
            let time: f64 = x.iter().map(|v| v * v).sum();
            let freq: f64 = spec.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64;
            prop_assert!((time - freq).abs() <= 1e-9 * time.max(1e-300));
        }

        #[test]
        fn feature_layout_round_trips(v in proptest::collection::vec(-1e6f32..1e6, FEATURE_LEN)) {
            let fv = FeatureVector::new(v.clone()).unwrap();
            let back = FeatureVector::from_complex(&fv.to_complex()).unwrap();
            prop_assert_eq!(back.as_slice(), &v[..]);
        }
    }

    fn record(seed: u64) -> SpectrumRecord {
        let n = 1075;
        let receivers = (0..10)
            .map(|r| {
                (0..n)
                    .map(|k| {
                        let a = (seed as f64 + 1.0) * ((r * 31 + k) as f64 * 0.37).sin();
                        Complex64::new(a, 0.5 * a.cos())
                    })
                    .collect()
            })
            .collect();
        SpectrumRecord { bin_spacing: 1.0 / 21.5e-9, first_bin: 0, receivers }
    }

    #[test]
    fn calibration_identities() {
        let a = record(1);
        let zero = calibrate(&a, &a).unwrap();
        assert!(zero.receivers.iter().flatten().all(|v| v.norm() == 0.0));

        let (b, c) = (record(2), record(3));
        let sum = SpectrumRecord {
            receivers: a.receivers.iter().zip(&b.receivers).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect(),
            ..a.clone()
        };
        let lhs = calibrate(&sum, &c).unwrap();
        let ac = calibrate(&a, &c).unwrap();
        for ((l, r), bb) in lhs.receivers.iter().flatten().zip(ac.receivers.iter().flatten()).zip(b.receivers.iter().flatten()) {
            assert!((l - (r + bb)).norm() < 1e-12 * (1.0 + l.norm()));
        }
    }

    #[test]
    fn calibration_rejects_mismatched_grids() {
        let a = record(1);
        let mut b = record(1);
        b.bin_spacing *= 2.0;
        assert!(matches!(calibrate(&a, &b), Err(SignalError::Calibration(_))));
        let mut c = record(1);
        c.receivers.pop();
        assert!(matches!(calibrate(&a, &c), Err(SignalError::Calibration(_))));
    }

    #[test]
    fn peak_scaling_is_scale_invariant() {
        let x = FeatureVector::new((0..FEATURE_LEN).map(|k| ((k as f32) * 0.37).sin() * 3.0).collect()).unwrap();
        let y = FeatureVector::new(x.as_slice().iter().map(|v| v * 8.0).collect()).unwrap();
        let (a, b) = (AmplitudeScaling::PeakMagnitude.apply(&x), AmplitudeScaling::PeakMagnitude.apply(&y));
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((p - q).abs() < 1e-6);
        }
        let peak = a.to_complex().iter().flatten().fold(0f64, |m, v| m.max(v.norm()));
        assert!((peak - 1.0).abs() < 1e-6);
        assert_eq!(AmplitudeScaling::PeakMagnitude.apply(&FeatureVector::zeros()), FeatureVector::zeros());
        assert_eq!(AmplitudeScaling::None.apply(&x), x);
    }

    #[test]
    fn band_is_bins_30_to_73() {
        let spacing: f64 = 1.0 / 21.5e-9;
        assert!((spacing - 46.51e6).abs() < 0.01e6);
        assert_eq!(band_bins(spacing), 30..74);
        let lo = 30.0 * spacing;
        let hi = 73.0 * spacing;
        assert!((lo - 1.395e9).abs() < 1e6 && (hi - 3.395e9).abs() < 1e6);
    }

    #[test]
    fn assembled_features_have_documented_layout() {
        let rec = record(4);
        let fv = assemble_features(&rec).unwrap();
        assert_eq!(fv.as_slice().len(), 880);
        assert_eq!(fv.as_slice()[0], rec.receivers[0][30].re as f32);
        assert_eq!(fv.as_slice()[44 * 3 + 5], rec.receivers[3][35].re as f32);
        assert_eq!(fv.as_slice()[440 + 44 * 9 + 43], rec.receivers[9][73].im as f32);

        let zero = SpectrumRecord { receivers: vec![vec![Complex64::new(0.0, 0.0); 1075]; 10], ..rec.clone() };
        assert!(assemble_features(&zero).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_records_fail_band_selection() {
        let rec = SpectrumRecord { receivers: vec![vec![Complex64::new(1.0, 0.0); 60]; 10], ..record(0) };
        assert!(matches!(assemble_features(&rec), Err(SignalError::Band { .. })));
        let rec = SpectrumRecord { receivers: vec![vec![Complex64::new(1.0, 0.0); 1075]; 9], ..record(0) };
        assert!(matches!(assemble_features(&rec), Err(SignalError::Receivers { .. })));
    }

    #[test]
    fn standardization() {
        let xs: Vec<FeatureVector> = (0..20)
            .map(|s| FeatureVector::new((0..FEATURE_LEN).map(|k| ((s * 7 + k * 3) % 11) as f32 * (k as f32 + 1.0)).collect()).unwrap())
            .collect();
        let stats = FeatureStats::fit(&xs);
        let mean_fv = FeatureVector::new(stats.mean.iter().map(|&m| m as f32).collect()).unwrap();
        for (v, m) in stats.standardize(&mean_fv).iter().zip(&stats.mean) {
            assert!(v.abs() < 1e-6 * (1.0 + m.abs()));
        }
        let single = FeatureStats::fit(std::slice::from_ref(&xs[0]));
        assert!(single.standardize(&xs[0]).iter().all(|&v| v == 0.0));

        let z: Vec<Vec<f64>> = xs.iter().map(|x| stats.standardize(x)).collect();
        for d in 0..FEATURE_LEN {
            let m: f64 = z.iter().map(|r| r[d]).sum::<f64>() / z.len() as f64;
            let v: f64 = z.iter().map(|r| (r[d] - m).powi(2)).sum::<f64>() / z.len() as f64;
            assert!(m.abs() < 1e-9);
            assert!((v.sqrt() - 1.0).abs() < 1e-6 || stats.scale[d] == SCALE_FLOOR);
        }
    }
}
