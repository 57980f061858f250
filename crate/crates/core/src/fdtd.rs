//! 2D TMz finite-difference time-domain solver.
//!
//! Field components `Ez`, `Hx`, `Hy` live on a Yee lattice: `Ez` on nodes
//! `(i, j)`, `Hx` on `(i, j + 1/2)` and `Hy` on `(i + 1/2, j)`. Materials are
//! assigned per `Ez` node and enter through the usual lossy update
//! coefficients. The domain is wrapped in a convolutional PML (CPML) backed by
//! a PEC wall; the source is a soft (additive) `Ez` line source.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::Grid2;
use crate::scene::MaterialGrid;
use crate::{C0, EPS0, ETA0, MU0};

#[derive(Debug, Error)]
pub enum FdtdError {
    #[error("non-finite field value at step {step}")]
    Unstable { step: usize },
    #[error("Courant number {0:.4} exceeds the 2D stability bound 1/sqrt(2)")]
    Courant(f64),
    #[error("material grid is {got:?} but the lattice is {expected:?}")]
    GridMismatch { got: (usize, usize), expected: (usize, usize) },
    #[error("point ({0:.4}, {1:.4}) m is outside the lattice")]
    OutsideLattice(f64, f64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Base of the exponential in the source envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeBase {
    /// `10^(-(t - mu)^2 / (2 sigma^2))`.
    Decimal,
    /// `e^(-(t - mu)^2 / (2 sigma^2))`, with `sigma` rescaled by `1/sqrt(ln 10)`
    /// so the pulse matches the decimal form.
    Natural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Side of the square interior region, excluding the PML (m).
    pub domain_size: f64,
    /// Center frequency (Hz).
    pub fc: f64,
    /// Nominal pulse bandwidth (Hz).
    pub bandwidth: f64,
    /// Cell size (m).
    pub dx: f64,
    /// Time step (s).
    pub dt: f64,
    /// Record length (s).
    pub duration: f64,
    /// PML thickness (m).
    pub pml_depth: f64,
    /// Polynomial grading order of the PML conductivity.
    pub pml_order: f64,
    /// Complex-frequency-shift parameter at the PML inner face (S/m).
    pub pml_alpha_max: f64,
    /// Envelope width (s).
    pub sigma_t: f64,
    /// Envelope center (s).
    pub mu_t: f64,
    pub envelope: EnvelopeBase,
    /// Transmitter position (m).
    pub tx: (f64, f64),
    /// Receiver positions (m).
    pub rx: Vec<(f64, f64)>,
}

/// Number of receivers in the default array.
pub const RECEIVER_COUNT: usize = 10;

impl Default for SimConfig {
    fn default() -> Self {
        let fc = 2.4e9;
        let wavelength = C0 / fc;
        let rx = (0..RECEIVER_COUNT)
            .map(|k| (-0.28 + 0.56 * k as f64 / (RECEIVER_COUNT - 1) as f64, 0.8))
            .collect();
        Self {
            domain_size: 2.5,
            fc,
            bandwidth: 2.0e9,
            dx: wavelength / 10.0,
            dt: 0.02e-9,
            duration: 21.5e-9,
            pml_depth: 2.0 * wavelength,
            pml_order: 3.0,
            pml_alpha_max: 0.05,
            sigma_t: 0.13e-9,
            mu_t: 2.0e-9,
            envelope: EnvelopeBase::Decimal,
            tx: (0.0, 0.5),
            rx,
        }
    }
}

impl SimConfig {
    /// Center wavelength (m).
    pub fn wavelength(&self) -> f64 {
        C0 / self.fc
    }

    /// Number of time steps in one record.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// `c dt / dx`.
    /// DFT bin spacing of a full-length record (Hz).
    pub fn bin_spacing(&self) -> f64 {
        1.0 / (self.steps() as f64 * self.dt)
    }

    pub fn courant_number(&self) -> f64 {
        courant_number(self)
    }

    pub fn lattice(&self) -> Lattice {
        let pml = (self.pml_depth / self.dx).round() as usize;
        let half = (self.domain_size / 2.0 / self.dx - 1e-9).ceil() as usize;
        let interior_y = (self.domain_size / self.dx - 1e-9).ceil() as usize + 1;
        Lattice {
            nx: 2 * (half + pml) + 1,
            ny: interior_y + 2 * pml,
            dx: self.dx,
            pml,
            ic: half + pml,
            jc: pml,
        }
    }

    /// Stable hex digest of the configuration, used to key datasets.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(text.as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Returns `c dt / dx`.
pub fn courant_number(cfg: &SimConfig) -> f64 {
    C0 * cfg.dt / cfg.dx
}

/// Node layout of the simulation lattice, PML included.
///
/// `x` is centered: node `center_i()` sits at `x = 0` and the lattice is
/// mirror-symmetric about it. `y = 0` is the inner face of the lower PML.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    /// PML thickness in cells.
    pub pml: usize,
    ic: usize,
    jc: usize,
}

impl Lattice {
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - self.ic as f64) * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        (j as f64 - self.jc as f64) * self.dx
    }

    pub fn center_i(&self) -> usize {
        self.ic
    }

    /// Largest interior `y` coordinate (m).
    pub fn interior_y_max(&self) -> f64 {
        self.y(self.ny - 1 - self.pml)
    }

    /// Nearest node to a physical point.
    pub fn node(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = (x / self.dx).round() + self.ic as f64;
        let j = (y / self.dx).round() + self.jc as f64;
        (i >= 0.0 && j >= 0.0 && i < self.nx as f64 && j < self.ny as f64).then(|| (i as usize, j as usize))
    }

    /// Whether a node lies outside every PML strip.
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i >= self.pml && i < self.nx - self.pml && j >= self.pml && j < self.ny - self.pml
    }
}

/// Source waveform at time `t`.
///
/// `S(t) = 1/sqrt(2 pi sigma_t^2) * 10^(-(t - mu_t)^2 / (2 sigma_t^2)) * sin(2 pi fc t)`
/// with the decimal envelope; [`EnvelopeBase::Natural`] swaps in the
/// equivalent base-e Gaussian.
pub fn source_amplitude(t: f64, cfg: &SimConfig) -> f64 {
    let s2 = cfg.sigma_t * cfg.sigma_t;
    let arg = -(t - cfg.mu_t).powi(2) / (2.0 * s2);
    let envelope = match cfg.envelope {
        EnvelopeBase::Decimal => 10f64.powf(arg),
        EnvelopeBase::Natural => (arg * std::f64::consts::LN_10).exp(),
    };
    envelope / (2.0 * std::f64::consts::PI * s2).sqrt() * (2.0 * std::f64::consts::PI * cfg.fc * t).sin()
}

/// Time series of `Ez` at one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTrace {
    pub rx_index: usize,
    pub dt: f64,
    pub samples: Vec<f64>,
}

/// Fields and CPML accumulators.
#[derive(Debug, Clone)]
pub struct FieldState {
    pub ez: Grid2,
    pub hx: Grid2,
    pub hy: Grid2,
    psi_ez_x: Grid2,
    psi_ez_y: Grid2,
    psi_hx_y: Grid2,
    psi_hy_x: Grid2,
    pub step_index: usize,
}

impl FieldState {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        let z = Grid2::filled(nx, ny, 0.0);
        Self {
            ez: z.clone(),
            hx: z.clone(),
            hy: z.clone(),
            psi_ez_x: z.clone(),
            psi_ez_y: z.clone(),
            psi_hx_y: z.clone(),
            psi_hy_x: z,
            step_index: 0,
        }
    }
}

/// CPML recursion coefficients along one axis, for integer (`e`) and
/// half-integer (`h`) positions.
#[derive(Debug, Clone)]
struct CpmlAxis {
    be: Vec<f64>,
    ce: Vec<f64>,
    bh: Vec<f64>,
    ch: Vec<f64>,
    /// Node ranges (lower, upper) carrying nonzero `ce`.
    e_strips: [std::ops::Range<usize>; 2],
    /// Half-node ranges carrying nonzero `ch`; half-node `i` is `i + 1/2`.
    h_strips: [std::ops::Range<usize>; 2],
}

impl CpmlAxis {
    fn new(n: usize, pml: usize, cfg: &SimConfig) -> Self {
        let depth = pml as f64 * cfg.dx;
        let m = cfg.pml_order;
        let sigma_max = 0.8 * (m + 1.0) / (ETA0 * cfg.dx);
        let coeffs = |pos: f64| -> (f64, f64) {
            // distance into the PML from whichever inner face is closer
            let lower = pml as f64 - pos;
            let upper = pos - (n - 1 - pml) as f64;
            let rho = lower.max(upper).max(0.0) * cfg.dx;
            if rho <= 0.0 || depth <= 0.0 {
                return (1.0, 0.0);
            }
            let frac = (rho / depth).min(1.0);
            let sigma = sigma_max * frac.powf(m);
            let alpha = cfg.pml_alpha_max * (1.0 - frac);
            let b = (-(sigma + alpha) * cfg.dt / EPS0).exp();
            let c = if sigma + alpha > 0.0 { sigma / (sigma + alpha) * (b - 1.0) } else { 0.0 };
            (b, c)
        };
        let (be, ce): (Vec<f64>, Vec<f64>) = (0..n).map(|i| coeffs(i as f64)).unzip();
        let (bh, ch): (Vec<f64>, Vec<f64>) = (0..n).map(|i| coeffs(i as f64 + 0.5)).unzip();
        Self {
            be,
            ce,
            bh,
            ch,
            e_strips: [1..pml.min(n - 1), (n - pml).max(1)..n - 1],
            h_strips: [0..pml, n - 1 - pml..n - 1],
        }
    }
}

/// A configured solver: lattice, update coefficients, fields and probes.
#[derive(Debug, Clone)]
pub struct Simulation {
    lattice: Lattice,
    dt: f64,
    ca: Vec<f64>,
    cb: Vec<f64>,
    eps: Vec<f64>,
    px: CpmlAxis,
    py: CpmlAxis,
    pub state: FieldState,
}

impl Simulation {
    pub fn new(grid: &MaterialGrid, cfg: &SimConfig) -> Result<Self, FdtdError> {
        let courant = cfg.courant_number();
        if courant > std::f64::consts::FRAC_1_SQRT_2 {
            return Err(FdtdError::Courant(courant));
        }
        let lattice = cfg.lattice();
        let expected = (lattice.nx, lattice.ny);
        if grid.shape() != expected {
            return Err(FdtdError::GridMismatch { got: grid.shape(), expected });
        }
        let n = lattice.nx * lattice.ny;
        let mut ca = vec![0.0; n];
        let mut cb = vec![0.0; n];
        let mut eps = vec![0.0; n];
        for (k, (&er, &sig)) in grid.eps_r.as_slice().iter().zip(grid.sigma.as_slice()).enumerate() {
            let e = er * EPS0;
            let loss = sig * cfg.dt / (2.0 * e);
            ca[k] = (1.0 - loss) / (1.0 + loss);
            // curl differences are divided by dx before use
            cb[k] = cfg.dt / e / (1.0 + loss);
            eps[k] = e;
        }
        Ok(Self {
            lattice,
            dt: cfg.dt,
            ca,
            cb,
            eps,
            px: CpmlAxis::new(lattice.nx, lattice.pml, cfg),
            py: CpmlAxis::new(lattice.ny, lattice.pml, cfg),
            state: FieldState::zeros(lattice.nx, lattice.ny),
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// One leapfrog update: `Hx`, `Hy`, then `Ez`, then the soft source.
    pub fn step(&mut self, source: Option<((usize, usize), f64)>) -> Result<(), FdtdError> {
        self.update_h();
        self.update_e();
        if let Some(((i, j), value)) = source {
            self.state.ez[(i, j)] += value;
        }
        let step = self.state.step_index;
        self.state.step_index += 1;
        if !self.state.ez.as_slice().iter().all(|v| v.is_finite()) {
            return Err(FdtdError::Unstable { step });
        }
        Ok(())
    }

    fn update_h(&mut self) {
        let Lattice { nx, ny, dx, .. } = self.lattice;
        let dh = self.dt / (MU0 * dx);
        let s = &mut self.state;
        let ez = s.ez.as_slice();
        let hx = s.hx.as_mut_slice();
        for (erow, hrow) in ez.chunks_exact(ny).zip(hx.chunks_exact_mut(ny)) {
            for j in 0..ny - 1 {
                hrow[j] -= dh * (erow[j + 1] - erow[j]);
            }
        }
        let hy = s.hy.as_mut_slice();
        for i in 0..nx - 1 {
            let (a, b) = (&ez[i * ny..(i + 1) * ny], &ez[(i + 1) * ny..(i + 2) * ny]);
            let hrow = &mut hy[i * ny..(i + 1) * ny];
            for j in 0..ny {
                hrow[j] += dh * (b[j] - a[j]);
            }
        }

        // CPML corrections
        let db = self.dt / MU0;
        let inv_dx = 1.0 / dx;
        let psi = s.psi_hx_y.as_mut_slice();
        for strip in &self.py.h_strips {
            for i in 0..nx {
                for j in strip.clone() {
                    let k = i * ny + j;
                    psi[k] = self.py.bh[j] * psi[k] + self.py.ch[j] * (ez[k + 1] - ez[k]) * inv_dx;
                    hx[k] -= db * psi[k];
                }
            }
        }
        let psi = s.psi_hy_x.as_mut_slice();
        for strip in &self.px.h_strips {
            for i in strip.clone() {
                let (b, c) = (self.px.bh[i], self.px.ch[i]);
                for j in 0..ny {
                    let k = i * ny + j;
                    psi[k] = b * psi[k] + c * (ez[k + ny] - ez[k]) * inv_dx;
                    hy[k] += db * psi[k];
                }
            }
        }
    }

    fn update_e(&mut self) {
        let Lattice { nx, ny, dx, .. } = self.lattice;
        let inv_dx = 1.0 / dx;
        let s = &mut self.state;
        let (hx, hy) = (s.hx.as_slice(), s.hy.as_slice());
        let ez = s.ez.as_mut_slice();
        for i in 1..nx - 1 {
            let row = i * ny;
            let (ez_r, ca_r, cb_r) = (&mut ez[row..row + ny], &self.ca[row..row + ny], &self.cb[row..row + ny]);
            let (hy_r, hy_l, hx_r) = (&hy[row..row + ny], &hy[row - ny..row], &hx[row..row + ny]);
            for j in 1..ny - 1 {
                let curl = (hy_r[j] - hy_l[j]) - (hx_r[j] - hx_r[j - 1]);
                ez_r[j] = ca_r[j] * ez_r[j] + cb_r[j] * curl * inv_dx;
            }
        }

        let psi = s.psi_ez_x.as_mut_slice();
        for strip in &self.px.e_strips {
            for i in strip.clone() {
                let (b, c) = (self.px.be[i], self.px.ce[i]);
                for j in 1..ny - 1 {
                    let k = i * ny + j;
                    psi[k] = b * psi[k] + c * (hy[k] - hy[k - ny]) * inv_dx;
                    ez[k] += self.cb[k] * psi[k];
                }
            }
        }
        let psi = s.psi_ez_y.as_mut_slice();
        for strip in &self.py.e_strips {
            for i in 1..nx - 1 {
                for j in strip.clone() {
                    let k = i * ny + j;
                    psi[k] = self.py.be[j] * psi[k] + self.py.ce[j] * (hx[k] - hx[k - 1]) * inv_dx;
                    ez[k] -= self.cb[k] * psi[k];
                }
            }
        }
    }

    /// Electromagnetic energy per unit length stored in the non-PML region (J/m).
    pub fn interior_energy(&self) -> f64 {
        let lat = &self.lattice;
        let s = &self.state;
        let mut w = 0.0;
        for i in lat.pml..lat.nx - lat.pml {
            for j in lat.pml..lat.ny - lat.pml {
                let k = i * lat.ny + j;
                let (ez, hx, hy) = (s.ez.as_slice()[k], s.hx.as_slice()[k], s.hy.as_slice()[k]);
                w += self.eps[k] * ez * ez + MU0 * (hx * hx + hy * hy);
            }
        }
        0.5 * w * lat.dx * lat.dx
    }
}

/// Runs one full record with the transmitter of `cfg` and returns the `Ez`
/// trace at every receiver.
pub fn run_simulation(grid: &MaterialGrid, cfg: &SimConfig) -> Result<Vec<ProbeTrace>, FdtdError> {
    run_with_probes(grid, cfg, cfg.tx, &cfg.rx)
}

/// Like [`run_simulation`] with an explicit source and probe set.
pub fn run_with_probes(
    grid: &MaterialGrid,
    cfg: &SimConfig,
    source: (f64, f64),
    probes: &[(f64, f64)],
) -> Result<Vec<ProbeTrace>, FdtdError> {
    let mut sim = Simulation::new(grid, cfg)?;
    let lat = *sim.lattice();
    let src = lat.node(source.0, source.1).ok_or(FdtdError::OutsideLattice(source.0, source.1))?;
    let nodes = probes
        .iter()
        .map(|&(x, y)| lat.node(x, y).ok_or(FdtdError::OutsideLattice(x, y)))
        .collect::<Result<Vec<_>, _>>()?;
    let steps = cfg.steps();
    let mut traces: Vec<ProbeTrace> = (0..nodes.len())
        .map(|rx_index| ProbeTrace { rx_index, dt: cfg.dt, samples: Vec::with_capacity(steps) })
        .collect();
    for n in 0..steps {
        let value = source_amplitude(n as f64 * cfg.dt, cfg);
        sim.step(Some((src, value)))?;
        for (trace, &node) in traces.iter_mut().zip(&nodes) {
            trace.samples.push(sim.state.ez[node]);
        }
    }
    Ok(traces)
}

/// Writes a field snapshot as little-endian `f32` values plus a text
/// sidecar (`<path>.hdr`) with the shape, cell size and step.
pub fn write_snapshot(path: &Path, field: &Grid2, dx: f64, step: usize) -> Result<(), FdtdError> {
    let mut bytes = Vec::with_capacity(field.as_slice().len() * 4);
    for &v in field.as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    let mut hdr = fs::File::create(path.with_extension("hdr"))?;
    writeln!(hdr, "shape = {} {}", field.nx(), field.ny())?;
    writeln!(hdr, "order = row-major, y fastest")?;
    writeln!(hdr, "dx = {dx}")?;
    writeln!(hdr, "step = {step}")?;
    Ok(())
}
