//! Line source over a dielectric slab, evaluated through its plane-wave
//! spectrum: each spectral component is reflected with the transfer-matrix
//! coefficient of the slab and the result is integrated numerically.
//!
//! Propagating components use `kx = k sin(theta)`, evanescent ones
//! `kx = k cosh(tau)`; both substitutions cancel the `1/ky` singularity.

use num_complex::Complex64;

const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Reflection of an `Ez`-polarized plane wave from a slab of relative
/// permittivity `eps` and thickness `d` in air, as a function of `ky` in air.
pub fn slab_reflection(k: f64, ky: Complex64, eps: Complex64, d: f64) -> Complex64 {
    let kx2 = k * k - ky * ky;
    let mut k2y = (eps * k * k - kx2).sqrt();
    if k2y.im > 0.0 {
        k2y = -k2y;
    }
    let r = (ky - k2y) / (ky + k2y);
    let phase = (-2.0 * J * k2y * d).exp();
    r * (1.0 - phase) / (1.0 - r * r * phase)
}

fn simpson(n: usize, lo: f64, hi: f64, f: impl Fn(f64) -> Complex64) -> Complex64 {
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for m in 1..n {
        acc += f(lo + m as f64 * h) * if m % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// `integral of R(kx) exp(-j kx x - j ky y) / ky dkx`, proportional to the
/// line-source field at horizontal offset `x` and total vertical path `y`.
pub fn spectral_field(k: f64, x: f64, y: f64, reflection: impl Fn(Complex64) -> Complex64) -> Complex64 {
    let propagating = simpson(20_000, -std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2, |theta| {
        let ky = Complex64::new(k * theta.cos(), 0.0);
        reflection(ky) * (-J * k * (x * theta.sin() + y * theta.cos())).exp()
    });
    // evanescent tail: decays like exp(-k y sinh(tau))
    let tau_max = (60.0 / (k * y)).asinh();
    let evanescent = simpson(40_000, 0.0, tau_max, |tau| {
        let ky = Complex64::new(0.0, -k * tau.sinh());
        let lateral = 2.0 * (k * x * tau.cosh()).cos();
        J * reflection(ky) * lateral * (-k * y * tau.sinh()).exp()
    });
    propagating + evanescent
}

/// Ratio of the slab-reflected field to the direct field for a source and
/// receiver on the same side of the slab.
///
/// `direct` is the source-receiver separation along `y` (the two share `x`
/// offset `x`), `path` the total vertical distance source -> front face ->
/// receiver.
pub fn reflected_over_direct(k: f64, eps: Complex64, d: f64, x: f64, direct: f64, path: f64) -> Complex64 {
    let reflected = spectral_field(k, x, path, |ky| slab_reflection(k, ky, eps, d));
    let incident = spectral_field(k, x, direct, |_| Complex64::new(1.0, 0.0));
    reflected / incident
}
