//! Solver-level checks against independent references: analytic slab
//! reflection, a large-domain PML reference, symmetry and reciprocity.

mod oracle {
    pub mod slab;
}
mod support {
    pub mod solver;
}

use num_complex::Complex64;
use oracle::slab;
use support::solver::{self, homogeneous, peak, refined};
use wallnet_core::fdtd::{run_with_probes, source_amplitude, Simulation};
use wallnet_core::scene::{build_material_grid, MaterialGrid, WallGeometry, WallSpec};
use wallnet_core::{CaseId, SimConfig, C0};

#[test]
fn oracle_direct_field_matches_hankel_asymptote() {
    let k = 2.0 * std::f64::consts::PI * 2.4e9 / C0;
    for y in [0.3, 0.7, 1.5] {
        let got = slab::spectral_field(k, 0.0, y, |_| Complex64::new(1.0, 0.0)).norm();
        // |pi H0(kr)| ~ pi sqrt(2 / (pi k r)) (1 + O(1/(8 k r)))
        let asym = std::f64::consts::PI * (2.0 / (std::f64::consts::PI * k * y)).sqrt();
        assert!((got / asym - 1.0).abs() < 1.0 / (8.0 * k * y) + 1e-3, "y={y}: {got} vs {asym}");
    }
}

#[test]
fn oracle_limits() {
    let k = 50.0;
    // eps -> 1: no reflection
    let r = slab::slab_reflection(k, Complex64::new(k, 0.0), Complex64::new(1.0, 0.0), 0.2);
    assert!(r.norm() < 1e-15);
    // single interface at normal incidence for a half-wave slab vanishes
    let eps = 4.0;
    let d = std::f64::consts::PI / (k * 2.0);
    let r = slab::slab_reflection(k, Complex64::new(k, 0.0), Complex64::new(eps, 0.0), d);
    assert!(r.norm() < 1e-12, "{r}");
    // quarter-wave slab: |R| = (eps - 1) / (eps + 1)
    let r = slab::slab_reflection(k, Complex64::new(k, 0.0), Complex64::new(eps, 0.0), d / 2.0);
    assert!((r.norm() - 0.6).abs() < 1e-12, "{r}");
}

/// Refined-grid configuration: the default lambda/10 cell leaves only five
/// cells per wavelength inside an eps_r = 4 slab, too coarse for a 5% phase-
/// sensitive comparison.
#[test]
fn slab_reflection_matches_spectral_oracle() {
    assert!(solver::slab_reflection_error() < 0.05);
}

#[test]
fn pml_reflection_below_minus_40_db() {
    assert!(solver::pml_reflection_db() < -40.0);
}

#[test]
fn free_space_energy_decays() {
    let cfg = SimConfig::default();
    let mut sim = Simulation::new(&MaterialGrid::free_space(&cfg), &cfg).unwrap();
    let lat = *sim.lattice();
    let src = lat.node(cfg.tx.0, cfg.tx.1).unwrap();
    let mut peak_energy = 0.0f64;
    for n in 0..cfg.steps() {
        sim.step(Some((src, source_amplitude(n as f64 * cfg.dt, &cfg)))).unwrap();
        peak_energy = peak_energy.max(sim.interior_energy());
    }
    let last = sim.interior_energy();
    println!("energy ratio at end of record: {:.3e}", last / peak_energy);
    assert!(last < 1e-4 * peak_energy);
}

#[test]
fn symmetric_wall_gives_mirrored_receivers() {
    let cfg = SimConfig::default();
    let spec = homogeneous(6.0, 0.3, 1e-3);
    let traces = run_with_probes(&build_material_grid(&spec, &cfg).unwrap(), &cfg, cfg.tx, &cfg.rx).unwrap();
    let scale = peak(&traces[0].samples);
    for k in 0..5 {
        let (a, b) = (&traces[k].samples, &traces[9 - k].samples);
        let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff <= 1e-10 * scale, "rx {k} vs {}: {diff}", 9 - k);
    }
}

#[test]
fn transmission_is_reciprocal() {
    let cfg = SimConfig::default();
    let spec = WallSpec {
        case_id: CaseId(0),
        sigma: 1e-2,
        geometry: WallGeometry::Layered { eps_outer: 2.5, eps_inner: 7.0, outer_thickness: 0.05, inner_thickness: 0.3 },
    };
    let grid = build_material_grid(&spec, &cfg).unwrap();
    let (a, b) = ((0.13, 0.5), (-0.41, 0.85));
    let ab = run_with_probes(&grid, &cfg, a, &[b]).unwrap().remove(0).samples;
    let ba = run_with_probes(&grid, &cfg, b, &[a]).unwrap().remove(0).samples;
    let scale = peak(&ab);
    let diff = ab.iter().zip(&ba).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    println!("reciprocity mismatch {:.3e} of peak", diff / scale);
    assert!(diff < 1e-6 * scale);
}

#[test]
fn wall_echo_first_arrival_matches_two_way_standoff() {
    // On the default grid the leading edge of the echo is smeared by
    // dispersion inside the wall, so arrival times are read on lambda/40.
    let mut cfg = refined(40.0);
    cfg.duration = 8e-9;
    let spec = homogeneous(8.0, 0.2, 1e-4);
    let grid = build_material_grid(&spec, &cfg).unwrap();
    let lat = cfg.lattice();
    let (_, jr) = lat.node(cfg.rx[0].0, cfg.rx[0].1).unwrap();
    let front_node = (0..lat.ny).find(|&j| grid.eps_r[(lat.center_i(), j)] > 1.0).unwrap();
    let face = lat.y(front_node) - lat.dx / 2.0;

    let wall = run_with_probes(&grid, &cfg, cfg.tx, &cfg.rx).unwrap().remove(0).samples;
    let direct = run_with_probes(&MaterialGrid::free_space(&cfg), &cfg, cfg.tx, &cfg.rx).unwrap().remove(0).samples;
    let echo: Vec<f64> = wall.iter().zip(&direct).map(|(a, b)| a - b).collect();

    // first arrival: first sample above 1% of the trace's own peak
    let onset = |s: &[f64]| {
        let threshold = 0.01 * peak(s);
        s.iter().position(|v| v.abs() > threshold).unwrap() as f64 * cfg.dt
    };
    let measured = onset(&echo) - onset(&direct);
    let standoff = 2.0 * (face - lat.y(jr)) / C0;
    println!("echo delay {:.3} ns, two-way standoff {:.3} ns", measured * 1e9, standoff * 1e9);
    assert!((measured - standoff).abs() <= 0.05 * standoff);
}

#[test]
fn self_calibration_is_exact() {
    assert!(solver::self_calibration_residual() <= 1e-12);
}
