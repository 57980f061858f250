//! Wall families, their FDTD material grids and the 32x32 label rasters.
//!
//! All geometry is expressed in the simulation frame: `x` runs along the wall,
//! `y` points from the transmitter into the wall. The wall's front face sits
//! at `y = 1.0 m` and the wall extends across the full simulation width
//! (including the absorbing layers), so it is uniform along `x` except for the
//! lossy inclusions of type-2 and type-3 walls.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fdtd::SimConfig;
use crate::grid::Grid2;

/// Raster side length in pixels.
pub const RASTER_SIDE: usize = 32;
/// Flattened raster length.
pub const RASTER_LEN: usize = RASTER_SIDE * RASTER_SIDE;
/// Raster extent along `x` (m).
pub const RASTER_X: (f64, f64) = (-1.0, 1.0);
/// Raster extent along `y` (m).
pub const RASTER_Y: (f64, f64) = (1.0, 1.8);
/// Position of the wall's front face (m).
pub const WALL_FRONT_Y: f64 = 1.0;

/// Nominal clearance between a lossy inclusion and the wall boundary (m).
pub const LOSSY_MARGIN: f64 = 0.10;
/// Width of one lossy inclusion along `x` (m).
pub const LOSSY_WIDTH: f64 = 0.10;
/// Number of lossy inclusions in type-2/3 walls.
pub const LOSSY_COUNT: usize = 4;
/// Smallest inclusion height along `y`; the `y` margin shrinks to honor it.
pub const LOSSY_MIN_HEIGHT: f64 = 0.10;

/// Upper end of the dielectric label scale.
pub const EPS_MAX: f64 = 8.0;
/// Conductivities at or below this value map to label zero (S/m).
pub const SIGMA_FLOOR: f64 = 1e-5;
/// Upper end of the conductivity label scale (S/m).
pub const SIGMA_MAX: f64 = 1e-2;

// Geometric comparisons are done on half-open intervals shifted by this much,
// so values produced by decimal arithmetic land on the intended side.
const GEOM_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("wall spans y = [{front:.4}, {back:.4}] m but the simulation domain ends at y = {limit:.4} m")]
    OutsideDomain { front: f64, back: f64, limit: f64 },
    #[error("case {0}: {1}")]
    InvalidSpec(CaseId, String),
}

/// Stable identifier of a wall case: its position in [`enumerate_cases`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaseId(pub u32);

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "case-{:03}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WallType {
    /// Single homogeneous lossy dielectric layer.
    Homogeneous = 1,
    /// Dielectric layer with four lossy inclusions.
    LossyInclusions = 2,
    /// Outer/inner/outer dielectric stack with four lossy inclusions.
    Layered = 3,
}

impl WallType {
    pub const ALL: [WallType; 3] = [WallType::Homogeneous, WallType::LossyInclusions, WallType::Layered];

    pub fn number(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for WallType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "type-{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WallGeometry {
    Homogeneous { eps_r: f64, thickness: f64 },
    LossyInclusions { eps_r: f64, thickness: f64 },
    /// Layer stack along `y` is `[outer | inner | outer]`.
    Layered { eps_outer: f64, eps_inner: f64, outer_thickness: f64, inner_thickness: f64 },
}

/// One wall case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub case_id: CaseId,
    /// Conductivity (S/m) of the whole wall (type 1) or of the lossy inclusions.
    pub sigma: f64,
    pub geometry: WallGeometry,
}

/// Axis-aligned rectangle `[x0, x1) x [y0, y1)` in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        in_span(x, self.x0, self.x1) && in_span(y, self.y0, self.y1)
    }
}

/// Relative permittivity and conductivity of one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub eps_r: f64,
    pub sigma: f64,
}

impl Material {
    pub const AIR: Material = Material { eps_r: 1.0, sigma: 0.0 };
}

fn in_span(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo - GEOM_TOL && v < hi - GEOM_TOL
}

impl WallSpec {
    pub fn wall_type(&self) -> WallType {
        match self.geometry {
            WallGeometry::Homogeneous { .. } => WallType::Homogeneous,
            WallGeometry::LossyInclusions { .. } => WallType::LossyInclusions,
            WallGeometry::Layered { .. } => WallType::Layered,
        }
    }

    /// Total wall thickness along `y` (m).
    pub fn thickness(&self) -> f64 {
        match self.geometry {
            WallGeometry::Homogeneous { thickness, .. } | WallGeometry::LossyInclusions { thickness, .. } => {
                thickness
            }
            WallGeometry::Layered { outer_thickness, inner_thickness, .. } => {
                2.0 * outer_thickness + inner_thickness
            }
        }
    }

    /// Checks the parameter ranges of the wall family.
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |what: &str| Err(SceneError::InvalidSpec(self.case_id, what.to_string()));
        let within = |v: f64, lo: f64, hi: f64| v >= lo - GEOM_TOL && v <= hi + GEOM_TOL;
        if !within(self.sigma, 1e-4, 1e-2) {
            return bad("conductivity outside [1e-4, 1e-2] S/m");
        }
        match self.geometry {
            WallGeometry::Homogeneous { eps_r, thickness } => {
                if !within(eps_r, 4.0, 8.0) {
                    return bad("permittivity outside [4, 8]");
                }
                if !within(thickness, 0.10, 0.50) {
                    return bad("thickness outside [0.10, 0.50] m");
                }
            }
            WallGeometry::LossyInclusions { eps_r, thickness } => {
                if !within(eps_r, 4.0, 8.0) {
                    return bad("permittivity outside [4, 8]");
                }
                if !within(thickness, 0.20, 0.50) {
                    return bad("thickness outside [0.20, 0.50] m");
                }
            }
            WallGeometry::Layered { eps_outer, eps_inner, outer_thickness, inner_thickness } => {
                if !within(eps_inner, 4.0, 8.0) {
                    return bad("inner permittivity outside [4, 8]");
                }
                if !within(eps_outer, 2.0, 3.0) {
                    return bad("outer permittivity outside [2, 3]");
                }
                if !within(inner_thickness, 0.20, 0.40) {
                    return bad("inner thickness outside [0.20, 0.40] m");
                }
                if !within(outer_thickness, 0.05, 0.10) {
                    return bad("outer thickness outside [0.05, 0.10] m");
                }
            }
        }
        Ok(())
    }

    /// The four lossy inclusions of type-2/3 walls; empty for type 1.
    ///
    /// The inclusions are 10 cm wide, centered in four equal slots spanning
    /// `x = [-0.9, 0.9]` m, and fill the wall height minus a 10 cm margin on
    /// each face. Thin walls shrink the margin so the inclusion stays at
    /// least [`LOSSY_MIN_HEIGHT`] tall.
    pub fn lossy_regions(&self) -> Vec<Rect> {
        if self.wall_type() == WallType::Homogeneous {
            return Vec::new();
        }
        let total = self.thickness();
        let margin_y = LOSSY_MARGIN.min(((total - LOSSY_MIN_HEIGHT) / 2.0).max(0.0));
        let span_lo = RASTER_X.0 + LOSSY_MARGIN;
        let slot = (RASTER_X.1 - LOSSY_MARGIN - span_lo) / LOSSY_COUNT as f64;
        (0..LOSSY_COUNT)
            .map(|k| {
                let center = span_lo + (k as f64 + 0.5) * slot;
                Rect {
                    x0: center - LOSSY_WIDTH / 2.0,
                    x1: center + LOSSY_WIDTH / 2.0,
                    y0: WALL_FRONT_Y + margin_y,
                    y1: WALL_FRONT_Y + total - margin_y,
                }
            })
            .collect()
    }

    /// Material at a physical point.
    pub fn material_at(&self, x: f64, y: f64) -> Material {
        let depth = y - WALL_FRONT_Y;
        if !in_span(y, WALL_FRONT_Y, WALL_FRONT_Y + self.thickness()) {
            return Material::AIR;
        }
        let lossy = || self.lossy_regions().iter().any(|r| r.contains(x, y));
        match self.geometry {
            WallGeometry::Homogeneous { eps_r, .. } => Material { eps_r, sigma: self.sigma },
            WallGeometry::LossyInclusions { eps_r, .. } => {
                Material { eps_r, sigma: if lossy() { self.sigma } else { 0.0 } }
            }
            WallGeometry::Layered { eps_outer, eps_inner, outer_thickness, inner_thickness } => {
                let inner = in_span(depth, outer_thickness, outer_thickness + inner_thickness);
                Material {
                    eps_r: if inner { eps_inner } else { eps_outer },
                    sigma: if lossy() { self.sigma } else { 0.0 },
                }
            }
        }
    }
}

/// `k`-th of `n` uniformly spaced values over `[lo, hi]`, computed as
/// `(lo * d + k * (hi - lo) * d) / d` on scaled integers to land on the
/// nearest double of the decimal value.
fn grid_value(lo: f64, hi: f64, n: usize, k: usize) -> f64 {
    if n == 1 {
        return lo;
    }
    const SCALE: f64 = 1e4;
    let lo_i = (lo * SCALE).round();
    let step_i = ((hi - lo) * SCALE).round() / (n - 1) as f64;
    (lo_i + step_i * k as f64).round() / SCALE
}

/// Conductivity levels shared by all wall families (S/m).
pub const SIGMA_LEVELS: [f64; 3] = [1e-4, 1e-3, 1e-2];

/// Every wall case, in a fixed order: type 1, 2, 3; within a type the
/// parameters vary slowest-to-fastest in the order they are listed in the
/// geometry, with conductivity fastest.
pub fn enumerate_cases() -> Vec<WallSpec> {
    let mut out = Vec::with_capacity(867);
    let mut push = |geometry: WallGeometry, sigma: f64| {
        let case_id = CaseId(out.len() as u32);
        out.push(WallSpec { case_id, sigma, geometry });
    };
    for e in 0..21 {
        for t in 0..5 {
            for &sigma in &SIGMA_LEVELS {
                let geometry = WallGeometry::Homogeneous {
                    eps_r: grid_value(4.0, 8.0, 21, e),
                    thickness: grid_value(0.10, 0.50, 5, t),
                };
                push(geometry, sigma);
            }
        }
    }
    for e in 0..21 {
        for t in 0..4 {
            for &sigma in &SIGMA_LEVELS {
                let geometry = WallGeometry::LossyInclusions {
                    eps_r: grid_value(4.0, 8.0, 21, e),
                    thickness: grid_value(0.20, 0.50, 4, t),
                };
                push(geometry, sigma);
            }
        }
    }
    for ei in 0..5 {
        for eo in 0..2 {
            for li in 0..5 {
                for lo in 0..2 {
                    for &sigma in &SIGMA_LEVELS {
                        let geometry = WallGeometry::Layered {
                            eps_outer: grid_value(2.0, 3.0, 2, eo),
                            eps_inner: grid_value(4.0, 8.0, 5, ei),
                            outer_thickness: grid_value(0.05, 0.10, 2, lo),
                            inner_thickness: grid_value(0.20, 0.40, 5, li),
                        };
                        push(geometry, sigma);
                    }
                }
            }
        }
    }
    out
}

/// Per-cell relative permittivity and conductivity over the FDTD lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialGrid {
    pub eps_r: Grid2,
    pub sigma: Grid2,
    pub dx: f64,
    /// Physical coordinate of cell `(0, 0)`.
    pub origin: (f64, f64),
}

impl MaterialGrid {
    /// Homogeneous free space on the lattice of `cfg`.
    pub fn free_space(cfg: &SimConfig) -> Self {
        let lat = cfg.lattice();
        Self {
            eps_r: Grid2::filled(lat.nx, lat.ny, 1.0),
            sigma: Grid2::filled(lat.nx, lat.ny, 0.0),
            dx: lat.dx,
            origin: (lat.x(0), lat.y(0)),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.eps_r.nx(), self.eps_r.ny())
    }

    /// Material of the cell nearest to a physical point, or `None` outside the grid.
    pub fn sample(&self, x: f64, y: f64) -> Option<Material> {
        let i = ((x - self.origin.0) / self.dx).round();
        let j = ((y - self.origin.1) / self.dx).round();
        let (nx, ny) = self.shape();
        if i < 0.0 || j < 0.0 || i >= nx as f64 || j >= ny as f64 {
            return None;
        }
        let (i, j) = (i as usize, j as usize);
        Some(Material { eps_r: self.eps_r[(i, j)], sigma: self.sigma[(i, j)] })
    }
}

/// Rasterizes a wall onto the FDTD lattice, sampling the material at every
/// `Ez` node.
pub fn build_material_grid(spec: &WallSpec, cfg: &SimConfig) -> Result<MaterialGrid, SceneError> {
    let lat = cfg.lattice();
    let back = WALL_FRONT_Y + spec.thickness();
    let limit = lat.interior_y_max();
    if WALL_FRONT_Y < 0.0 || back > limit + GEOM_TOL {
        return Err(SceneError::OutsideDomain { front: WALL_FRONT_Y, back, limit });
    }
    let mut grid = MaterialGrid::free_space(cfg);
    for i in 0..lat.nx {
        let x = lat.x(i);
        for j in 0..lat.ny {
            let m = spec.material_at(x, lat.y(j));
            grid.eps_r[(i, j)] = m.eps_r;
            grid.sigma[(i, j)] = m.sigma;
        }
    }
    Ok(grid)
}

/// Maps physical material values to label space `[0, 1]`.
///
/// Permittivity is linear from air (1) to [`EPS_MAX`]; conductivity is
/// logarithmic between [`SIGMA_FLOOR`] and [`SIGMA_MAX`]. Both are clamped.
pub fn normalize_material(eps_r: f64, sigma: f64) -> (f64, f64) {
    let u_eps = ((eps_r - 1.0) / (EPS_MAX - 1.0)).clamp(0.0, 1.0);
    let u_sigma = ((sigma.max(SIGMA_FLOOR) / SIGMA_FLOOR).log10() / (SIGMA_MAX / SIGMA_FLOOR).log10())
        .clamp(0.0, 1.0);
    (u_eps, u_sigma)
}

/// Inverse of the permittivity label map.
pub fn denormalize_eps(u: f64) -> f64 {
    1.0 + u.clamp(0.0, 1.0) * (EPS_MAX - 1.0)
}

/// Inverse of the conductivity label map; label zero (at or below the floor)
/// reports zero conductivity.
pub fn denormalize_sigma(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    if u <= 0.0 {
        return 0.0;
    }
    SIGMA_FLOOR * (SIGMA_MAX / SIGMA_FLOOR).powf(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Dielectric,
    Conductivity,
}

impl ProfileKind {
    pub const ALL: [ProfileKind; 2] = [ProfileKind::Dielectric, ProfileKind::Conductivity];

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::Dielectric => "dielectric",
            ProfileKind::Conductivity => "conductivity",
        }
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProfileKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dielectric" | "eps" | "permittivity" => Ok(ProfileKind::Dielectric),
            "conductivity" | "sigma" => Ok(ProfileKind::Conductivity),
            other => Err(format!("unknown profile kind '{other}' (expected dielectric|conductivity)")),
        }
    }
}

/// A 32x32 label image over `x in [-1, 1] m`, `y in [1, 1.8] m`.
///
/// Stored row-major with `x` varying fastest: pixel `(row, col)` is at
/// `pixels[row * 32 + col]`, row indexing `y` upward from the front face.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRaster {
    pub kind: ProfileKind,
    pub pixels: Vec<f32>,
}

impl ProfileRaster {
    pub fn zeros(kind: ProfileKind) -> Self {
        Self { kind, pixels: vec![0.0; RASTER_LEN] }
    }

    /// Reshapes a flat 1024-vector; `None` on a length mismatch.
    pub fn from_flat(kind: ProfileKind, pixels: Vec<f32>) -> Option<Self> {
        (pixels.len() == RASTER_LEN).then_some(Self { kind, pixels })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * RASTER_SIDE + col]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.pixels.chunks_exact(RASTER_SIDE)
    }

    /// Physical center of pixel `(row, col)`.
    pub fn pixel_center(row: usize, col: usize) -> (f64, f64) {
        let px = (RASTER_X.1 - RASTER_X.0) / RASTER_SIDE as f64;
        let py = (RASTER_Y.1 - RASTER_Y.0) / RASTER_SIDE as f64;
        (RASTER_X.0 + (col as f64 + 0.5) * px, RASTER_Y.0 + (row as f64 + 0.5) * py)
    }

    /// Affine remap `[0, 1] -> [-1, 1]` used by the adversarial models.
    pub fn to_symmetric(&self) -> Vec<f32> {
        self.pixels.iter().map(|&u| 2.0 * u - 1.0).collect()
    }
}

/// Ground-truth dielectric and conductivity rasters, sampled at pixel centers.
pub fn rasterize_labels(spec: &WallSpec) -> (ProfileRaster, ProfileRaster) {
    rasterize_with(|x, y| spec.material_at(x, y))
}

/// Rasters of an arbitrary material function sampled at pixel centers.
pub fn rasterize_with(material: impl Fn(f64, f64) -> Material) -> (ProfileRaster, ProfileRaster) {
    let mut eps = ProfileRaster::zeros(ProfileKind::Dielectric);
    let mut sigma = ProfileRaster::zeros(ProfileKind::Conductivity);
    for row in 0..RASTER_SIDE {
        for col in 0..RASTER_SIDE {
            let (x, y) = ProfileRaster::pixel_center(row, col);
            let m = material(x, y);
            let (ue, us) = normalize_material(m.eps_r, m.sigma);
            eps.pixels[row * RASTER_SIDE + col] = ue as f32;
            sigma.pixels[row * RASTER_SIDE + col] = us as f32;
        }
    }
    (eps, sigma)
}
