//! Forward-modelling and data plumbing for wall characterization from
//! same-side scattered fields.
//!
//! The pipeline runs left to right through the modules:
//!
//! - [`scene`]: the three wall families, their FDTD material grids and the
//!   32x32 normalized label rasters.
//! - [`fdtd`]: a 2D TMz Yee solver with conduction loss, CPML boundaries, a
//!   soft line source and receiver probes.
//! - [`signal`]: probe traces to spectra, free-space calibration and the
//!   880-element feature vector.
//! - [`dataset`]: generation over all wall cases, the on-disk container and
//!   stratified splits.
//! - [`ingest`]: measured VNA S21 sweeps mapped onto the same feature grid.

pub mod dataset;
pub mod fdtd;
pub mod grid;
pub mod ingest;
pub mod scene;
pub mod signal;

/// Speed of light in vacuum (m/s).
pub const C0: f64 = 299_792_458.0;
/// Vacuum permeability (H/m).
pub const MU0: f64 = 1.256_637_062_12e-6;
/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 1.0 / (MU0 * C0 * C0);
/// Free-space wave impedance (ohm).
pub const ETA0: f64 = MU0 * C0;

pub use dataset::{DatasetManifest, Sample, Split};
pub use fdtd::{ProbeTrace, SimConfig};
pub use scene::{CaseId, MaterialGrid, ProfileKind, ProfileRaster, WallGeometry, WallSpec, WallType};
pub use signal::{AmplitudeScaling, FeatureStats, FeatureVector, SpectrumRecord};
