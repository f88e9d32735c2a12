//! Lambda-level scheme and the prepared inhomogeneous ensemble.
//!
//! Levels are indexed `|1>` (ground, probe-coupled), `|2>` (ground, storage)
//! and `|3>` (excited). The ensemble is the post-preparation state: all
//! population in `|1>`, with the prepared optical feature and the hyperfine
//! (spin) inhomogeneity discretized onto a Gaussian tensor-product grid of
//! detuning classes.
//!
//! Internally every frequency and rate is angular (rad/s). Configuration
//! values are Hz; linewidths are full widths at half maximum.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{eit_fwhm, Spectrum};
use crate::error::{Error, Result};

/// FWHM of a Gaussian in units of its standard deviation, `2 sqrt(2 ln 2)`.
pub const GAUSSIAN_FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Convert a frequency in Hz to angular units.
#[inline]
pub fn hz_to_rad(f: f64) -> f64 {
    2.0 * PI * f
}

/// Convert an angular frequency to Hz.
#[inline]
pub fn rad_to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

pub const LEVEL_LABELS: [&str; 3] = ["|1> ground (probe)", "|2> ground (storage)", "|3> excited"];

/// Decay and dephasing constants of the three-level system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelScheme {
    /// Excited-state population decay rate (rad/s).
    pub gamma3: f64,
    /// Branching ratio of `|3>` decay into `|1>`; the remainder goes to `|2>`.
    pub branching_b1: f64,
    /// Decay rate of the optical coherences rho13 and rho23 (rad/s).
    pub gamma_opt: f64,
    /// Residual static dephasing rate of the spin coherence rho12 (rad/s).
    pub gamma_spin: f64,
}

impl LevelScheme {
    pub fn new(gamma3: f64, branching_b1: f64, gamma_opt: f64, gamma_spin: f64) -> Result<Self> {
        let s = LevelScheme {
            gamma3,
            branching_b1,
            gamma_opt,
            gamma_spin,
        };
        s.validate()?;
        Ok(s)
    }

    /// Build from linewidths in Hz.
    ///
    /// `gamma3_hz` is the lifetime-limited linewidth `Gamma3 / 2pi`; the
    /// coherence linewidths are FWHM, so the coherence decay rate is
    /// `pi * FWHM`.
    pub fn from_linewidths_hz(
        gamma3_hz: f64,
        gamma_opt_hz: f64,
        branching_b1: f64,
        gamma_spin_hz: f64,
    ) -> Result<Self> {
        Self::new(
            hz_to_rad(gamma3_hz),
            branching_b1,
            PI * gamma_opt_hz,
            PI * gamma_spin_hz,
        )
    }

    #[inline]
    pub fn branching_b2(&self) -> f64 {
        1.0 - self.branching_b1
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.gamma3, self.gamma_opt, self.gamma_spin];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::config("level-scheme rates must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.branching_b1) {
            return Err(Error::config("branching_b1 must lie in [0, 1]"));
        }
        if self.gamma_opt < 0.5 * self.gamma3 {
            return Err(Error::config(format!(
                "gamma_opt ({:.4e}) must be at least gamma3/2 ({:.4e})",
                self.gamma_opt,
                0.5 * self.gamma3
            )));
        }
        Ok(())
    }
}

impl Default for LevelScheme {
    /// 2.5 kHz optical homogeneous linewidth, 164 us excited-state lifetime,
    /// even branching, no static spin dephasing.
    fn default() -> Self {
        LevelScheme {
            gamma3: 1.0 / 164e-6,
            branching_b1: 0.5,
            gamma_opt: PI * 2500.0,
            gamma_spin: 0.0,
        }
    }
}

/// Gaussian inhomogeneous widths of the prepared feature, and the class
/// counts used to discretize them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InhomogeneousProfile {
    pub optical_fwhm_hz: f64,
    pub spin_fwhm_hz: f64,
    pub n_opt: usize,
    pub n_spin: usize,
}

impl Default for InhomogeneousProfile {
    fn default() -> Self {
        InhomogeneousProfile {
            optical_fwhm_hz: 100e3,
            spin_fwhm_hz: 10e3,
            n_opt: 161,
            n_spin: 21,
        }
    }
}

impl InhomogeneousProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.optical_fwhm_hz > 0.0 && self.spin_fwhm_hz > 0.0)
            || !self.optical_fwhm_hz.is_finite()
            || !self.spin_fwhm_hz.is_finite()
        {
            return Err(Error::config("inhomogeneous widths must be positive and finite"));
        }
        for (name, n) in [("n_opt", self.n_opt), ("n_spin", self.n_spin)] {
            if n == 0 || n % 2 == 0 {
                return Err(Error::config(format!(
                    "{name} = {n}: class counts must be odd and >= 1"
                )));
            }
        }
        Ok(())
    }

    pub fn optical_sigma(&self) -> f64 {
        hz_to_rad(self.optical_fwhm_hz) / GAUSSIAN_FWHM_PER_SIGMA
    }

    pub fn spin_sigma(&self) -> f64 {
        hz_to_rad(self.spin_fwhm_hz) / GAUSSIAN_FWHM_PER_SIGMA
    }
}

/// One member of the discretized ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetuningClass {
    /// Optical detuning of the `|1> -> |3>` transition (rad/s).
    pub delta_opt: f64,
    /// Spin detuning; rho12 precesses as `exp(-i delta_spin t)` (rad/s).
    pub delta_spin: f64,
    pub weight: f64,
}

impl DetuningClass {
    pub const RESONANT: DetuningClass = DetuningClass {
        delta_opt: 0.0,
        delta_spin: 0.0,
        weight: 1.0,
    };
}

/// Symmetric abscissae on `[-3 sigma, 3 sigma]` with unnormalized Gaussian
/// weights. Mirror points are exact negatives of each other.
fn axis(n: usize, sigma: f64) -> Vec<(f64, f64)> {
    if n == 1 {
        return vec![(0.0, 1.0)];
    }
    let half = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let u = (2 * i) as f64 - half; // integer-valued, antisymmetric
            let x = 3.0 * sigma * u / half;
            let z = 3.0 * u / half;
            (x, (-0.5 * z * z).exp())
        })
        .collect()
}

/// Tensor-product grid over (optical, spin) detuning, optical-major order,
/// with weights renormalized to sum to one.
pub fn discretize_profile(profile: &InhomogeneousProfile) -> Result<Vec<DetuningClass>> {
    profile.validate()?;
    let opt = axis(profile.n_opt, profile.optical_sigma());
    let spin = axis(profile.n_spin, profile.spin_sigma());
    let mut classes = Vec::with_capacity(opt.len() * spin.len());
    for &(d_opt, w_opt) in &opt {
        for &(d_spin, w_spin) in &spin {
            classes.push(DetuningClass {
                delta_opt: d_opt,
                delta_spin: d_spin,
                weight: w_opt * w_spin,
            });
        }
    }
    let total: f64 = classes.iter().map(|c| c.weight).sum();
    for c in &mut classes {
        c.weight /= total;
    }
    Ok(classes)
}

/// Single-class weak-probe response `rho31 / (i Omega_p / 2)` in steady state
/// with all population in `|1>`.
#[inline]
fn class_response(class: &DetuningClass, scheme: &LevelScheme, omega_c: f64, probe_detuning: f64) -> Complex64 {
    let optical = Complex64::new(scheme.gamma_opt, class.delta_opt - probe_detuning);
    if omega_c == 0.0 {
        return optical.inv();
    }
    // two-photon factor; written without division so exact two-photon
    // resonance with zero spin dephasing stays finite
    let raman = Complex64::new(scheme.gamma_spin, -(probe_detuning + class.delta_spin));
    raman / (optical * raman + 0.25 * omega_c * omega_c)
}

/// Peak (coupling-off, on-resonance) absorptive response of the ensemble.
pub fn peak_absorption(classes: &[DetuningClass], scheme: &LevelScheme) -> f64 {
    classes
        .iter()
        .map(|c| c.weight * class_response(c, scheme, 0.0, 0.0).re)
        .sum()
}

/// Ensemble weak-probe response normalized to the coupling-off resonant
/// absorption.
///
/// The real part is the absorption and the imaginary part the dispersion:
/// the probe amplitude after optical depth `d` is multiplied by
/// `exp(-d/2 * r)`, so intensity transmission is `exp(-d * r.re)`.
pub fn weak_probe_susceptibility(
    classes: &[DetuningClass],
    scheme: &LevelScheme,
    omega_c: f64,
    probe_detuning: f64,
) -> Complex64 {
    let norm = peak_absorption(classes, scheme);
    let sum: Complex64 = classes
        .iter()
        .map(|c| c.weight * class_response(c, scheme, omega_c, probe_detuning))
        .sum();
    sum / norm
}

/// Intensity transmission of a weak cw probe through optical depth `d`.
pub fn weak_probe_transmission(
    classes: &[DetuningClass],
    scheme: &LevelScheme,
    omega_c: f64,
    probe_detuning: f64,
    optical_depth: f64,
) -> f64 {
    (-optical_depth * weak_probe_susceptibility(classes, scheme, omega_c, probe_detuning).re).exp()
}

/// Absorption spectrum of the ensemble over `freqs_hz`, as `1 - r.re`
/// (the optically thin transmission shape, independent of optical depth).
pub fn analytic_thin_spectrum(
    classes: &[DetuningClass],
    scheme: &LevelScheme,
    omega_c: f64,
    freqs_hz: &[f64],
) -> Spectrum {
    let norm = peak_absorption(classes, scheme);
    let transmission = freqs_hz
        .iter()
        .map(|&f| {
            let dp = hz_to_rad(f);
            let a: f64 = classes
                .iter()
                .map(|c| c.weight * class_response(c, scheme, omega_c, dp).re)
                .sum();
            1.0 - a / norm
        })
        .collect();
    Spectrum {
        freq_hz: freqs_hz.to_vec(),
        transmission,
    }
}

/// Full width (Hz) of the analytic transparency window for coupling Rabi
/// frequency `omega_c`.
pub fn eit_width_analytic(classes: &[DetuningClass], scheme: &LevelScheme, omega_c: f64) -> Result<f64> {
    if !(omega_c > 0.0) {
        return Err(Error::analysis("no transparency window without a coupling field"));
    }
    let max_opt = classes.iter().map(|c| c.delta_opt.abs()).fold(0.0, f64::max);
    let max_spin = classes.iter().map(|c| c.delta_spin.abs()).fold(0.0, f64::max);
    let half_span = rad_to_hz(0.75 * omega_c + 1.2 * max_opt + 3.0 * max_spin + 10.0 * scheme.gamma_opt);
    let n = 8001;
    let freqs: Vec<f64> = (0..n)
        .map(|i| -half_span + 2.0 * half_span * i as f64 / (n - 1) as f64)
        .collect();
    let spectrum = analytic_thin_spectrum(classes, scheme, omega_c, &freqs);
    eit_fwhm(&spectrum)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(n_opt: usize, n_spin: usize) -> InhomogeneousProfile {
        InhomogeneousProfile {
            n_opt,
            n_spin,
            ..Default::default()
        }
    }

    #[test]
    fn degenerate_grid_is_single_resonant_class() {
        let c = discretize_profile(&profile(1, 1)).unwrap();
        assert_eq!(c, vec![DetuningClass::RESONANT]);
    }

    #[test]
    fn even_or_zero_counts_rejected() {
        assert!(matches!(discretize_profile(&profile(40, 1)), Err(Error::Config(_))));
        assert!(matches!(discretize_profile(&profile(3, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn weights_normalized_and_grid_symmetric() {
        for (no, ns) in [(41, 41), (7, 3), (161, 21)] {
            let c = discretize_profile(&profile(no, ns)).unwrap();
            let s: f64 = c.iter().map(|c| c.weight).sum();
            assert!((s - 1.0).abs() < 1e-12);
            let n = c.len();
            for i in 0..n {
                let m = c[n - 1 - i];
                assert_eq!(m.delta_opt, -c[i].delta_opt);
                assert_eq!(m.delta_spin, -c[i].delta_spin);
                assert_eq!(m.weight, c[i].weight);
            }
        }
    }

    #[test]
    fn optical_fwhm_reproduced_by_weighted_moment() {
        // weighted second moment of the optical axis, converted via the
        // Gaussian FWHM/sigma ratio
        let c = discretize_profile(&profile(41, 1)).unwrap();
        let var: f64 = c.iter().map(|c| c.weight * c.delta_opt * c.delta_opt).sum();
        let fwhm_hz = rad_to_hz(var.sqrt()) * GAUSSIAN_FWHM_PER_SIGMA;
        assert!((fwhm_hz / 100e3 - 1.0).abs() < 0.02, "fwhm = {fwhm_hz}");
    }

    #[test]
    fn invalid_scheme_rejected() {
        assert!(LevelScheme::new(1.0, 1.2, 1.0, 0.0).is_err());
        assert!(LevelScheme::new(10.0, 0.5, 1.0, 0.0).is_err());
        assert!(LevelScheme::new(-1.0, 0.5, 1.0, 0.0).is_err());
        let s = LevelScheme::default();
        assert_eq!(s.branching_b1 + s.branching_b2(), 1.0);
        assert!(s.gamma_opt >= s.gamma3 / 2.0);
    }

    #[test]
    fn beer_lambert_single_class() {
        let s = LevelScheme::default();
        let c = [DetuningClass::RESONANT];
        let t = weak_probe_transmission(&c, &s, 0.0, 0.0, 1.7);
        assert!((t - (-1.7f64).exp()).abs() < 1e-14);
        // 15 % peak absorption
        let d = -(0.85f64).ln();
        assert!((d - 0.1625).abs() < 5e-4);
        let c = discretize_profile(&InhomogeneousProfile::default()).unwrap();
        let t = weak_probe_transmission(&c, &s, 0.0, 0.0, d);
        assert!((t - 0.85).abs() < 1e-12);
    }

    #[test]
    fn coupling_off_matches_line_shape() {
        let s = LevelScheme::default();
        let c = discretize_profile(&profile(41, 5)).unwrap();
        let g = |dp: f64| -> f64 {
            c.iter()
                .map(|k| k.weight * s.gamma_opt / (s.gamma_opt.powi(2) + (k.delta_opt - dp).powi(2)))
                .sum()
        };
        let d = 0.8;
        for f in [-120e3, -31e3, 0.0, 4.2e3, 77e3] {
            let dp = hz_to_rad(f);
            let t = weak_probe_transmission(&c, &s, 0.0, dp, d);
            let expect = (-d * g(dp) / g(0.0)).exp();
            assert!((t - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn strong_coupling_dark_state_is_transparent() {
        let s = LevelScheme {
            gamma_spin: 0.0,
            ..Default::default()
        };
        let c = discretize_profile(&InhomogeneousProfile {
            spin_fwhm_hz: 1e-9,
            n_spin: 1,
            ..Default::default()
        })
        .unwrap();
        let mut prev = 0.0;
        for oc_hz in [10e3, 100e3, 1e6] {
            let t = weak_probe_transmission(&c, &s, hz_to_rad(oc_hz), 0.0, 0.1625);
            assert!(t >= prev);
            prev = t;
        }
        assert!(prev > 1.0 - 1e-9);
    }

    #[test]
    fn eit_width_requires_coupling() {
        let s = LevelScheme::default();
        let c = discretize_profile(&profile(41, 5)).unwrap();
        assert!(matches!(eit_width_analytic(&c, &s, 0.0), Err(Error::Analysis(_))));
    }
}
