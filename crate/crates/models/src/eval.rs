//! NMSE, thickness extraction, report tables and heatmap output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wallnet_core::dataset::{write_atomic, Split};
use wallnet_core::scene::{RASTER_SIDE, RASTER_Y};
use wallnet_core::{ProfileKind, ProfileRaster, Sample, WallType};

use crate::model::denormalize;
use crate::{Architecture, ModelError, TrainedModel};

/// Physical height of one raster row (m).
pub const ROW_PITCH: f64 = (RASTER_Y.1 - RASTER_Y.0) / RASTER_SIDE as f64;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("NMSE is undefined for an all-zero ground truth")]
    UndefinedMetric,
    #[error("shape mismatch: truth has {truth} values, estimate {estimate}")]
    Shape { truth: usize, estimate: usize },
    #[error("missing models: {}", .0.join(", "))]
    MissingModel(Vec<String>),
    #[error("no split for a {0}% training fraction")]
    MissingSplit(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

/// `||t - e||^2 / ||t||^2`, accumulated in `f64`.
pub fn nmse<A: Copy + Into<f64>, B: Copy + Into<f64>>(truth: &[A], estimate: &[B]) -> Result<f64, EvalError> {
    if truth.len() != estimate.len() {
        return Err(EvalError::Shape { truth: truth.len(), estimate: estimate.len() });
    }
    let (mut num, mut den) = (0f64, 0f64);
    for (&t, &e) in truth.iter().zip(estimate) {
        let (t, e) = (t.into(), e.into());
        num += (t - e) * (t - e);
        den += t * t;
    }
    if den == 0.0 {
        return Err(EvalError::UndefinedMetric);
    }
    Ok(num / den)
}

/// NMSE between rasters, in label space or (with `physical`) on the
/// denormalized permittivity / conductivity values.
pub fn raster_nmse(truth: &ProfileRaster, estimate: &ProfileRaster, physical: bool) -> Result<f64, EvalError> {
    if physical {
        nmse(&denormalize(truth), &denormalize(estimate))
    } else {
        nmse(&truth.pixels, &estimate.pixels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", content = "meters", rename_all = "snake_case")]
pub enum Thickness {
    Wall(f64),
    NoWall,
}

impl Thickness {
    pub fn meters(self) -> Option<f64> {
        match self {
            Thickness::Wall(m) => Some(m),
            Thickness::NoWall => None,
        }
    }
}

/// Wall thickness from a dielectric raster.
///
/// Rows (depth bins) are averaged across x. Rows above the half-rise level
/// `background + (peak - background) / 2`, with the background taken as the
/// lowest row mean, form the wall; the contiguous run holding the peak row
/// is converted to meters at 25 mm per row.
pub fn estimate_thickness(raster: &ProfileRaster) -> Thickness {
    let means: Vec<f64> =
        raster.rows().map(|r| r.iter().map(|&v| v as f64).sum::<f64>() / r.len() as f64).collect();
    let background = means.iter().copied().fold(f64::INFINITY, f64::min);
    let (peak_row, peak) = means
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, v)| if v > best.1 { (k, v) } else { best });
    let level = background + 0.5 * (peak - background);
    if !(peak > level) {
        return Thickness::NoWall;
    }
    let above = |k: usize| means[k] > level;
    let mut lo = peak_row;
    while lo > 0 && above(lo - 1) {
        lo -= 1;
    }
    let mut hi = peak_row;
    while hi + 1 < means.len() && above(hi + 1) {
        hi += 1;
    }
    Thickness::Wall((hi - lo + 1) as f64 * ROW_PITCH)
}

/// Identifies one trained model in a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelKey {
    pub arch: Architecture,
    pub kind: ProfileKind,
    /// Training share of the split, in percent.
    pub train_pct: u32,
}

impl std::fmt::Display for ModelKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}@{}%", self.arch, self.kind, self.train_pct)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub case_id: u32,
    pub wall_type: u8,
    pub nmse: f64,
    pub nmse_physical: f64,
    /// Dielectric models only.
    pub thickness_true: Option<f64>,
    pub thickness_estimate: Option<Thickness>,
}

impl SampleEval {
    /// `|estimate - truth| / truth`; a missed wall counts as 100 %.
    pub fn thickness_error(&self) -> Option<f64> {
        let t = self.thickness_true?;
        Some(match self.thickness_estimate? {
            Thickness::Wall(e) => (e - t).abs() / t,
            Thickness::NoWall => 1.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub key: ModelKey,
    pub samples: Vec<SampleEval>,
    pub mean_nmse: f64,
    pub mean_nmse_physical: f64,
    /// Mean NMSE per wall type number (1..=3).
    pub per_type: BTreeMap<u8, f64>,
    pub train_minutes: f64,
    pub infer_seconds_per_sample: f64,
}

impl ModelEval {
    /// Median relative thickness error over the given wall types.
    pub fn median_thickness_error(&self, types: &[u8]) -> Option<f64> {
        let mut errs: Vec<f64> = self
            .samples
            .iter()
            .filter(|s| types.contains(&s.wall_type))
            .filter_map(SampleEval::thickness_error)
            .collect();
        median(&mut errs)
    }
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Evaluates one model on the given test samples.
pub fn evaluate_model(key: ModelKey, model: &TrainedModel, test: &[&Sample]) -> Result<ModelEval, EvalError> {
    let xs: Vec<_> = test.iter().map(|s| s.features.clone()).collect();
    let started = Instant::now();
    let preds = model.predict_batch(&xs)?;
    let infer = started.elapsed().as_secs_f64() / test.len().max(1) as f64;
    let mut samples = Vec::with_capacity(test.len());
    for (s, p) in test.iter().zip(&preds) {
        let truth = s.label(model.kind);
        let dielectric = model.kind == ProfileKind::Dielectric;
        samples.push(SampleEval {
            case_id: s.case_id().0,
            wall_type: s.spec.wall_type().number(),
            nmse: raster_nmse(truth, p, false)?,
            nmse_physical: raster_nmse(truth, p, true)?,
            thickness_true: dielectric.then(|| s.spec.thickness()),
            thickness_estimate: dielectric.then(|| estimate_thickness(p)),
        });
    }
    let per_type = WallType::ALL
        .iter()
        .map(|t| t.number())
        .filter_map(|t| {
            let v: Vec<f64> = samples.iter().filter(|s| s.wall_type == t).map(|s| s.nmse).collect();
            (!v.is_empty()).then(|| (t, mean(v)))
        })
        .collect();
    Ok(ModelEval {
        key,
        mean_nmse: mean(samples.iter().map(|s| s.nmse)),
        mean_nmse_physical: mean(samples.iter().map(|s| s.nmse_physical)),
        per_type,
        samples,
        train_minutes: model.train_seconds / 60.0,
        infer_seconds_per_sample: infer,
    })
}

/// Training fraction whose models fill the main comparison table.
pub const PRIMARY_TRAIN_PCT: u32 = 90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub models: Vec<ModelEval>,
}

/// Evaluates every model on the test split of its training fraction.
///
/// All architecture/profile pairs must be present at [`PRIMARY_TRAIN_PCT`];
/// other fractions are optional.
pub fn build_report(
    models: &BTreeMap<ModelKey, TrainedModel>,
    samples: &[Sample],
    splits: &BTreeMap<u32, Split>,
) -> Result<EvalReport, EvalError> {
    let missing: Vec<String> = Architecture::ALL
        .iter()
        .flat_map(|&arch| ProfileKind::ALL.map(|kind| ModelKey { arch, kind, train_pct: PRIMARY_TRAIN_PCT }))
        .filter(|k| !models.contains_key(k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingModel(missing));
    }
    let mut out = Vec::new();
    for (key, model) in models {
        let split = splits.get(&key.train_pct).ok_or(EvalError::MissingSplit(key.train_pct))?;
        let test: Vec<&Sample> = split.test.iter().map(|&i| &samples[i]).collect();
        out.push(evaluate_model(*key, model, &test)?);
    }
    Ok(EvalReport { models: out })
}

/// Comparison across training fractions for one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendStep {
    pub arch: Architecture,
    pub from_pct: u32,
    pub to_pct: u32,
    pub nmse_from: f64,
    pub nmse_to: f64,
}

impl TrendStep {
    /// Less training data should not give a lower error.
    pub fn holds(&self) -> bool {
        self.nmse_to >= self.nmse_from
    }
}

impl EvalReport {
    pub fn get(&self, arch: Architecture, kind: ProfileKind, train_pct: u32) -> Option<&ModelEval> {
        self.models.iter().find(|m| m.key == ModelKey { arch, kind, train_pct })
    }

    /// Training fractions present, descending.
    pub fn fractions(&self) -> Vec<u32> {
        let mut f: Vec<u32> = self.models.iter().map(|m| m.key.train_pct).collect();
        f.sort_unstable_by(|a, b| b.cmp(a));
        f.dedup();
        f
    }

    /// Consecutive-fraction comparisons of the `kind` test NMSE for every
    /// architecture trained on that profile at each fraction.
    pub fn trend(&self, kind: ProfileKind) -> Vec<TrendStep> {
        let fr = self.fractions();
        let mut steps = Vec::new();
        for arch in Architecture::ALL {
            if !fr.iter().all(|&p| self.get(arch, kind, p).is_some()) {
                continue;
            }
            let at = |p: u32| self.get(arch, kind, p).expect("present").mean_nmse;
            for w in fr.windows(2) {
                steps.push(TrendStep { arch, from_pct: w[0], to_pct: w[1], nmse_from: at(w[0]), nmse_to: at(w[1]) });
            }
        }
        steps
    }

    /// Main comparison table as CSV: one row per architecture.
    pub fn table2_csv(&self) -> String {
        let mut s = String::from(
            "method,dielectric_nmse,conductivity_nmse,train_minutes_dielectric,train_minutes_conductivity,test_seconds_per_sample\n",
        );
        for arch in Architecture::ALL {
            let d = self.get(arch, ProfileKind::Dielectric, PRIMARY_TRAIN_PCT);
            let c = self.get(arch, ProfileKind::Conductivity, PRIMARY_TRAIN_PCT);
            let f = |m: Option<&ModelEval>, g: fn(&ModelEval) -> f64| m.map_or(String::new(), |m| format!("{:.4}", g(m)));
            let infer = mean(d.iter().chain(c.iter()).map(|m| m.infer_seconds_per_sample));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.5}",
                arch.label(),
                f(d, |m| m.mean_nmse),
                f(c, |m| m.mean_nmse),
                f(d, |m| m.train_minutes),
                f(c, |m| m.train_minutes),
                infer
            );
        }
        s
    }

    /// Training-fraction table as CSV: one row per (architecture, fraction).
    pub fn table3_csv(&self) -> String {
        let mut s = String::from("method,train_percent,dielectric_nmse,conductivity_nmse\n");
        for arch in Architecture::ALL {
            for p in self.fractions() {
                let cell = |k| self.get(arch, k, p).map_or(String::new(), |m| format!("{:.4}", m.mean_nmse));
                if self.get(arch, ProfileKind::Dielectric, p).is_none() && self.get(arch, ProfileKind::Conductivity, p).is_none()
                {
                    continue;
                }
                let _ = writeln!(
                    s,
                    "{},{p},{},{}",
                    arch.label(),
                    cell(ProfileKind::Dielectric),
                    cell(ProfileKind::Conductivity)
                );
            }
        }
        s
    }

    /// Every evaluated sample, one row each.
    pub fn samples_csv(&self) -> String {
        let mut s = String::from(
            "arch,profile,train_percent,case_id,wall_type,nmse,nmse_physical,thickness_true_m,thickness_estimate_m\n",
        );
        for m in &self.models {
            for e in &m.samples {
                let est = match e.thickness_estimate {
                    Some(Thickness::Wall(v)) => format!("{v:.4}"),
                    Some(Thickness::NoWall) => "none".into(),
                    None => String::new(),
                };
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{:.6},{:.6},{},{}",
                    m.key.arch,
                    m.key.kind,
                    m.key.train_pct,
                    e.case_id,
                    e.wall_type,
                    e.nmse,
                    e.nmse_physical,
                    e.thickness_true.map_or(String::new(), |t| format!("{t:.4}")),
                    est
                );
            }
        }
        s
    }

    /// Aligned plain-text rendering of both tables plus breakdowns.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Average test NMSE, {PRIMARY_TRAIN_PCT}% training data");
        let _ = writeln!(
            s,
            "{:<8} {:>12} {:>13} {:>11} {:>11} {:>12}",
            "method", "dielectric", "conductivity", "train min ε", "train min σ", "test s/smp"
        );
        for arch in Architecture::ALL {
            let d = self.get(arch, ProfileKind::Dielectric, PRIMARY_TRAIN_PCT);
            let c = self.get(arch, ProfileKind::Conductivity, PRIMARY_TRAIN_PCT);
            let f = |m: Option<&ModelEval>, g: fn(&ModelEval) -> f64, p: usize| {
                m.map_or("-".to_string(), |m| format!("{:.*}", p, g(m)))
            };
            let infer = mean(d.iter().chain(c.iter()).map(|m| m.infer_seconds_per_sample));
            let _ = writeln!(
                s,
                "{:<8} {:>12} {:>13} {:>11} {:>11} {:>12.5}",
                arch.label(),
                f(d, |m| m.mean_nmse, 4),
                f(c, |m| m.mean_nmse, 4),
                f(d, |m| m.train_minutes, 1),
                f(c, |m| m.train_minutes, 1),
                infer
            );
        }
        let fractions = self.fractions();
        if fractions.len() > 1 {
            let _ = writeln!(s, "\nAverage test NMSE by training fraction");
            let _ = write!(s, "{:<8} {:<13}", "method", "profile");
            for p in &fractions {
                let _ = write!(s, " {:>8}", format!("{p}%"));
            }
            s.push('\n');
            for arch in Architecture::ALL {
                for kind in ProfileKind::ALL {
                    let _ = write!(s, "{:<8} {:<13}", arch.label(), kind.as_str());
                    for &p in &fractions {
                        let v = self.get(arch, kind, p).map_or("-".into(), |m| format!("{:.4}", m.mean_nmse));
                        let _ = write!(s, " {v:>8}");
                    }
                    s.push('\n');
                }
            }
        }
        let _ = writeln!(s, "\nPer wall type ({PRIMARY_TRAIN_PCT}%)");
        let _ = writeln!(s, "{:<8} {:<13} {:>8} {:>8} {:>8} {:>14}", "method", "profile", "type 1", "type 2", "type 3", "thick. med err");
        for arch in Architecture::ALL {
            for kind in ProfileKind::ALL {
                let Some(m) = self.get(arch, kind, PRIMARY_TRAIN_PCT) else { continue };
                let t = |n: u8| m.per_type.get(&n).map_or("-".into(), |v| format!("{v:.4}"));
                let th = m.median_thickness_error(&[1, 2]).map_or("-".into(), |v| format!("{:.1}%", 100.0 * v));
                let _ = writeln!(s, "{:<8} {:<13} {:>8} {:>8} {:>8} {:>14}", arch.label(), kind.as_str(), t(1), t(2), t(3), th);
            }
        }
        s
    }

    /// Writes the tables, per-sample rows and the JSON report into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| EvalError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let json = serde_json::to_vec_pretty(self).expect("report serializes");
        for (name, bytes) in [
            ("table2.csv", self.table2_csv().into_bytes()),
            ("table3.csv", self.table3_csv().into_bytes()),
            ("samples.csv", self.samples_csv().into_bytes()),
            ("report.txt", self.to_text().into_bytes()),
            ("report.json", json),
        ] {
            let p = dir.join(name);
            write_atomic(&p, &bytes).map_err(io(&p))?;
        }
        Ok(())
    }
}

/// 8-bit binary PGM of a `[0, 1]` raster, front face (row 0) at the top.
pub fn raster_pgm(raster: &ProfileRaster) -> Vec<u8> {
    let mut out = format!("P5\n{RASTER_SIDE} {RASTER_SIDE}\n255\n").into_bytes();
    out.extend(raster.pixels.iter().map(|&u| (u.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// The raster as 32 comma-separated lines.
pub fn raster_csv(raster: &ProfileRaster) -> String {
    let mut s = String::new();
    for row in raster.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}
