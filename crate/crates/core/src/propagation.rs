//! One-dimensional Maxwell-Bloch propagation of the probe envelope through
//! the ensemble, and execution of complete timelines.
//!
//! The field is quasi-static: at every instant it is obtained by integrating
//! `dOmega/dz = i kappa sum_c w_c rho31` across the cell. Atoms sit at slice
//! centres and see the midpoint field `E_j + i kappa dz/2 P_j`, which makes
//! the spatial scheme second order. Because the polarization depends only on
//! the atomic state, a global RK4 step (field scan at every stage) stays
//! explicit.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoherence::{decay_envelope, NoiseModel};
use crate::dynamics::{apply_rf_pulse, DensityMatrix, RfPulse};
use crate::ensemble::{peak_absorption, rad_to_hz, DetuningClass, LevelScheme};
use crate::error::{Error, Result};
use crate::sequence::{validate, Event, FindingKind, Sequence, Severity};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Default number of spatial slices.
pub const DEFAULT_NZ: usize = 16;

/// Spatial discretization of the cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Cell length along the beams (m).
    pub length: f64,
    pub n_z: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            length: 4e-3,
            n_z: DEFAULT_NZ,
        }
    }
}

impl Grid {
    pub fn new(length: f64, n_z: usize) -> Result<Self> {
        let g = Grid { length, n_z };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(Error::config("cell length must be positive"));
        }
        if self.n_z < 8 {
            return Err(Error::config(format!("n_z = {} below the minimum of 8", self.n_z)));
        }
        Ok(())
    }

    pub fn dz(&self) -> f64 {
        self.length / self.n_z as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryMode {
    Co,
    Counter,
}

impl std::str::FromStr for GeometryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "co" => Ok(GeometryMode::Co),
            "counter" => Ok(GeometryMode::Counter),
            other => Err(Error::config(format!("unknown geometry '{other}' (expected co or counter)"))),
        }
    }
}

/// Beam geometry and wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub mode: GeometryMode,
    /// Probe wavelength (m).
    pub lambda_p: f64,
    /// Coupling wavelength (m).
    pub lambda_c: f64,
    /// Residual spin-wave wavevector left by nearly collinear beams (1/m).
    pub residual_mismatch_co: f64,
}

/// Nominal wavelength of the optical transition (m).
pub const NOMINAL_WAVELENGTH: f64 = 605.98e-9;

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            mode: GeometryMode::Counter,
            lambda_p: NOMINAL_WAVELENGTH,
            lambda_c: NOMINAL_WAVELENGTH,
            residual_mismatch_co: 100.0,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_p > 0.0) || !(self.lambda_c > 0.0) {
            return Err(Error::config("wavelengths must be positive"));
        }
        if !(self.residual_mismatch_co >= 0.0) {
            return Err(Error::config("residual mismatch must be non-negative"));
        }
        Ok(())
    }

    /// Magnitude of the stored spin-wave wavevector (1/m).
    pub fn spin_wave_k(&self) -> f64 {
        match self.mode {
            GeometryMode::Counter => 2.0 * PI / self.lambda_p + 2.0 * PI / self.lambda_c,
            GeometryMode::Co => self.residual_mismatch_co,
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Amplitude overlap between the stored spin wave and the read-out mode.
///
/// Each RF pulse reverses the spin-wave wavevector; after an odd number the
/// read-out is mismatched by `2 k_s` and the overlap is `|sinc(k_s L)|`.
pub fn phase_matching_factor(geometry: &Geometry, flip_count: u32, grid: &Grid) -> f64 {
    if flip_count % 2 == 0 {
        return 1.0;
    }
    let dk = 2.0 * geometry.spin_wave_k();
    sinc(0.5 * dk * grid.length).abs()
}

/// Compact Hermitian state of one class at one slice.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Atom {
    p1: f64,
    p2: f64,
    p3: f64,
    c12: Complex64,
    c13: Complex64,
    c23: Complex64,
}

impl Atom {
    const GROUND: Atom = Atom {
        p1: 1.0,
        p2: 0.0,
        p3: 0.0,
        c12: Complex64::new(0.0, 0.0),
        c13: Complex64::new(0.0, 0.0),
        c23: Complex64::new(0.0, 0.0),
    };

    #[inline]
    fn axpy(&self, k: &Atom, h: f64) -> Atom {
        Atom {
            p1: self.p1 + h * k.p1,
            p2: self.p2 + h * k.p2,
            p3: self.p3 + h * k.p3,
            c12: self.c12 + h * k.c12,
            c13: self.c13 + h * k.c13,
            c23: self.c23 + h * k.c23,
        }
    }

    fn to_density(self) -> DensityMatrix {
        let mut m = DensityMatrix::zeros();
        m.0[0][0] = self.p1.into();
        m.0[1][1] = self.p2.into();
        m.0[2][2] = self.p3.into();
        m.0[0][1] = self.c12;
        m.0[1][0] = self.c12.conj();
        m.0[0][2] = self.c13;
        m.0[2][0] = self.c13.conj();
        m.0[1][2] = self.c23;
        m.0[2][1] = self.c23.conj();
        m
    }

    fn from_density(m: &DensityMatrix) -> Atom {
        Atom {
            p1: m.0[0][0].re,
            p2: m.0[1][1].re,
            p3: m.0[2][2].re,
            c12: 0.5 * (m.0[0][1] + m.0[1][0].conj()),
            c13: 0.5 * (m.0[0][2] + m.0[2][0].conj()),
            c23: 0.5 * (m.0[1][2] + m.0[2][1].conj()),
        }
    }

    fn trace(&self) -> f64 {
        self.p1 + self.p2 + self.p3
    }
}

#[derive(Debug, Clone, Copy)]
struct Rates {
    gamma3: f64,
    b1: f64,
    b2: f64,
    gamma_opt: f64,
    gamma_spin: f64,
}

impl From<&LevelScheme> for Rates {
    fn from(s: &LevelScheme) -> Self {
        Rates {
            gamma3: s.gamma3,
            b1: s.branching_b1,
            b2: s.branching_b2(),
            gamma_opt: s.gamma_opt,
            gamma_spin: s.gamma_spin,
        }
    }
}

/// Master-equation derivative for optical drives only; `a = Omega_p/2`,
/// `b = Omega_c/2` (real), `h2 = -delta`, `h3 = Delta`.
#[inline]
fn derivative(s: &Atom, a: Complex64, b: f64, h2: f64, h3: f64, r: &Rates) -> Atom {
    let ac = a.conj();
    let ia13 = (a * s.c13).im;
    let ib23 = b * s.c23.im;
    let decay = r.gamma3 * s.p3;
    Atom {
        p1: 2.0 * ia13 + r.b1 * decay,
        p2: 2.0 * ib23 + r.b2 * decay,
        p3: -2.0 * ia13 - 2.0 * ib23 - decay,
        c12: I * (ac * s.c23.conj() + h2 * s.c12 - b * s.c13) - r.gamma_spin * s.c12,
        c13: I * (ac * (s.p3 - s.p1) - b * s.c12 + h3 * s.c13) - r.gamma_opt * s.c13,
        c23: I * ((h3 - h2) * s.c23 + b * (s.p3 - s.p2) - ac * s.c12.conj()) - r.gamma_opt * s.c23,
    }
}

/// Per-class exact free-evolution factors for one dark interval.
#[derive(Debug, Clone, Copy)]
struct FreeFactors {
    e12: Complex64,
    e13: Complex64,
    e23: Complex64,
}

/// Ensemble state over all slices and classes.
#[derive(Debug, Clone)]
pub struct MediumState {
    n_z: usize,
    classes: Vec<DetuningClass>,
    atoms: Vec<Atom>,
    /// Orientation of the stored spin-wave wavevector.
    pub spinwave_sign: i32,
    pub flip_count: u32,
}

impl MediumState {
    /// All population in `|1>` everywhere.
    pub fn new(grid: &Grid, classes: &[DetuningClass]) -> Result<Self> {
        grid.validate()?;
        if classes.is_empty() {
            return Err(Error::config("ensemble has no classes"));
        }
        Ok(MediumState {
            n_z: grid.n_z,
            classes: classes.to_vec(),
            atoms: vec![Atom::GROUND; grid.n_z * classes.len()],
            spinwave_sign: 1,
            flip_count: 0,
        })
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn classes(&self) -> &[DetuningClass] {
        &self.classes
    }

    pub fn density(&self, z: usize, class: usize) -> DensityMatrix {
        self.atoms[z * self.classes.len() + class].to_density()
    }

    pub fn set_density(&mut self, z: usize, class: usize, rho: &DensityMatrix) {
        let n = self.classes.len();
        self.atoms[z * n + class] = Atom::from_density(rho);
    }

    /// Register an RF pulse in the spin-wave bookkeeping.
    pub fn flip(&mut self) {
        self.flip_count += 1;
        self.spinwave_sign = -self.spinwave_sign;
    }

    fn slices(&self) -> std::slice::Chunks<'_, Atom> {
        self.atoms.chunks(self.classes.len())
    }

    /// Spin-wave amplitude `S(z) = sum_c w_c rho12` per slice.
    pub fn spin_wave(&self) -> Vec<Complex64> {
        self.slices()
            .map(|s| s.iter().zip(&self.classes).map(|(a, c)| c.weight * a.c12).sum())
            .collect()
    }

    /// Polarization `P(z) = sum_c w_c rho31` per slice.
    pub fn polarization(&self) -> Vec<Complex64> {
        polarization(&self.atoms, &self.classes)
    }

    /// `sum_c w_c |rho13|`, averaged over slices.
    pub fn optical_coherence(&self) -> f64 {
        let total: f64 = self
            .slices()
            .map(|s| s.iter().zip(&self.classes).map(|(a, c)| c.weight * a.c13.norm()).sum::<f64>())
            .sum();
        total / self.n_z as f64
    }

    /// `sum_c w_c |rho12|`, averaged over slices.
    pub fn spin_coherence(&self) -> f64 {
        let total: f64 = self
            .slices()
            .map(|s| s.iter().zip(&self.classes).map(|(a, c)| c.weight * a.c12.norm()).sum::<f64>())
            .sum();
        total / self.n_z as f64
    }

    pub fn max_trace_drift(&self) -> f64 {
        self.atoms.iter().map(|a| (a.trace() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn max_hermiticity_defect(&self) -> f64 {
        self.atoms
            .par_iter()
            .map(|a| a.to_density().hermiticity_defect())
            .reduce(|| 0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.atoms
            .par_iter()
            .map(|a| a.to_density().min_eigenvalue())
            .reduce(|| f64::INFINITY, f64::min)
    }

    /// Exact field-free evolution of every atom over `duration`.
    pub fn evolve_free(&mut self, scheme: &LevelScheme, duration: f64) {
        let factors = free_factors(&self.classes, scheme, duration);
        self.apply_free(&factors, scheme, duration);
    }

    fn apply_free(&mut self, factors: &[FreeFactors], scheme: &LevelScheme, duration: f64) {
        let d3 = (-scheme.gamma3 * duration).exp();
        let (b1, b2) = (scheme.branching_b1, scheme.branching_b2());
        let n_c = self.classes.len();
        self.atoms.par_chunks_mut(n_c).for_each(|slice| {
            for (a, f) in slice.iter_mut().zip(factors) {
                let lost = a.p3 * (1.0 - d3);
                a.p1 += b1 * lost;
                a.p2 += b2 * lost;
                a.p3 *= d3;
                a.c12 *= f.e12;
                a.c13 *= f.e13;
                a.c23 *= f.e23;
            }
        });
    }

    /// Ideal instantaneous RF rotation of every atom.
    pub fn apply_rf_instantaneous(&mut self, pulse: &RfPulse) {
        let u = pulse.spin_unitary();
        self.atoms.par_iter_mut().for_each(|a| rotate_spin(a, &u));
    }

    /// Scale the stored spin coherence.
    pub fn scale_spin_coherence(&mut self, factor: f64) {
        for a in &mut self.atoms {
            a.c12 *= factor;
        }
    }
}

fn free_factors(classes: &[DetuningClass], scheme: &LevelScheme, duration: f64) -> Vec<FreeFactors> {
    classes
        .iter()
        .map(|c| {
            let t = duration;
            FreeFactors {
                e12: Complex64::new(-scheme.gamma_spin * t, -c.delta_spin * t).exp(),
                e13: Complex64::new(-scheme.gamma_opt * t, c.delta_opt * t).exp(),
                e23: Complex64::new(-scheme.gamma_opt * t, (c.delta_opt + c.delta_spin) * t).exp(),
            }
        })
        .collect()
}

#[inline]
fn rotate_spin(a: &mut Atom, u: &[[Complex64; 2]; 2]) {
    let s = [[Complex64::from(a.p1), a.c12], [a.c12.conj(), Complex64::from(a.p2)]];
    let mut us = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            us[i][j] = u[i][0] * s[0][j] + u[i][1] * s[1][j];
        }
    }
    let m = |i: usize, j: usize| us[i][0] * u[j][0].conj() + us[i][1] * u[j][1].conj();
    a.p1 = m(0, 0).re;
    a.p2 = m(1, 1).re;
    a.c12 = m(0, 1);
    let (c13, c23) = (a.c13, a.c23);
    a.c13 = u[0][0] * c13 + u[0][1] * c23;
    a.c23 = u[1][0] * c13 + u[1][1] * c23;
}

fn polarization(atoms: &[Atom], classes: &[DetuningClass]) -> Vec<Complex64> {
    atoms
        .par_chunks(classes.len())
        .map(|s| {
            let mut p = Complex64::new(0.0, 0.0);
            for (a, c) in s.iter().zip(classes) {
                p += c.weight * a.c13.conj();
            }
            p
        })
        .collect()
}

/// Field-medium coupling shared by all steps of a run.
#[derive(Debug, Clone)]
pub struct Propagator {
    /// `dOmega/dz = i kappa P` (1/m per unit polarization, rad/s).
    pub kappa: f64,
    pub grid: Grid,
}

impl Propagator {
    /// Coupling constant chosen so a weak resonant cw probe with the coupling
    /// off is transmitted with intensity `exp(-d)`.
    pub fn new(grid: &Grid, classes: &[DetuningClass], scheme: &LevelScheme, optical_depth: f64) -> Result<Self> {
        grid.validate()?;
        if !(optical_depth >= 0.0) || !optical_depth.is_finite() {
            return Err(Error::config("optical depth must be finite and >= 0"));
        }
        let g0 = peak_absorption(classes, scheme);
        if !(g0 > 0.0) {
            return Err(Error::config("ensemble has no resonant absorption"));
        }
        Ok(Propagator {
            kappa: optical_depth / (grid.length * g0),
            grid: *grid,
        })
    }
}

/// Field envelope at the `n_z + 1` slice edges for the current medium state
/// and entrance field `input`.
pub fn propagate_step(input: Complex64, medium: &MediumState, propagator: &Propagator) -> Result<Vec<Complex64>> {
    if medium.n_z != propagator.grid.n_z {
        return Err(Error::config(format!(
            "medium has {} slices but the grid has {}",
            medium.n_z, propagator.grid.n_z
        )));
    }
    let pol = medium.polarization();
    let h = I * propagator.kappa * propagator.grid.dz();
    let mut out = Vec::with_capacity(pol.len() + 1);
    let mut e = input;
    out.push(e);
    for p in &pol {
        e += h * p;
        out.push(e);
    }
    Ok(out)
}

/// Working buffers for the global RK4 step.
///
/// The field scan only looks upstream, so all four stages can be completed
/// one slice at a time while carrying a running field per stage. This keeps
/// the per-slice working set in cache; the arithmetic and summation order
/// are those of a stage-by-stage sweep.
struct Stepper {
    y: Vec<Atom>,
    tmp: Vec<Atom>,
    acc: Vec<Atom>,
    h2: Vec<f64>,
    h3: Vec<f64>,
    rates: Rates,
}

impl Stepper {
    fn new(medium: &MediumState, scheme: &LevelScheme) -> Self {
        let n_c = medium.classes.len();
        Stepper {
            y: medium.atoms.clone(),
            tmp: vec![Atom::GROUND; n_c],
            acc: vec![Atom::GROUND; n_c],
            h2: medium.classes.iter().map(|c| -c.delta_spin).collect(),
            h3: medium.classes.iter().map(|c| c.delta_opt).collect(),
            rates: Rates::from(scheme),
        }
    }

    /// One RK4 step; returns the exit field at the start of the step.
    fn step(
        &mut self,
        prop: &Propagator,
        classes: &[DetuningClass],
        drive: impl Fn(f64) -> (Complex64, f64),
        t: f64,
        dt: f64,
    ) -> Complex64 {
        let n_c = classes.len();
        // (time offset, weight into acc, offset of next stage input)
        let stages = [(0.0, 1.0 / 6.0, 0.5), (0.5, 1.0 / 3.0, 0.5), (0.5, 1.0 / 3.0, 1.0), (1.0, 1.0 / 6.0, 0.0)];
        let mut field = [Complex64::new(0.0, 0.0); 4];
        let mut coupling = [0.0; 4];
        for (k, &(c, _, _)) in stages.iter().enumerate() {
            let (input, oc) = drive(t + c * dt);
            field[k] = input;
            coupling[k] = 0.5 * oc;
        }
        let h = I * prop.kappa * prop.grid.dz();
        let rates = self.rates;
        let (tmp, acc) = (&mut self.tmp, &mut self.acc);
        for y in self.y.chunks_mut(n_c) {
            for (k, &(_, w, next)) in stages.iter().enumerate() {
                let src: &[Atom] = if k == 0 { y } else { tmp };
                let mut p = Complex64::new(0.0, 0.0);
                for (s, cl) in src.iter().zip(classes) {
                    p += cl.weight * s.c13.conj();
                }
                let a = 0.5 * (field[k] + 0.5 * h * p);
                field[k] += h * p;
                let b = coupling[k];
                let (h2, h3) = (&self.h2[..], &self.h3[..]);
                match k {
                    0 => stage::<true, false>(y, tmp, acc, a, b, h2, h3, &rates, w * dt, next * dt),
                    3 => stage::<false, true>(y, tmp, acc, a, b, h2, h3, &rates, w * dt, next * dt),
                    _ => stage::<false, false>(y, tmp, acc, a, b, h2, h3, &rates, w * dt, next * dt),
                }
            }
            y.copy_from_slice(acc);
        }
        field[0]
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn stage<const FIRST: bool, const LAST: bool>(
    y: &[Atom],
    tmp: &mut [Atom],
    acc: &mut [Atom],
    a: Complex64,
    b: f64,
    h2: &[f64],
    h3: &[f64],
    rates: &Rates,
    w_dt: f64,
    next_dt: f64,
) {
    let n = y.len();
    let (tmp, acc, h2, h3) = (&mut tmp[..n], &mut acc[..n], &h2[..n], &h3[..n]);
    for i in 0..n {
        let s = if FIRST { y[i] } else { tmp[i] };
        let d = derivative(&s, a, b, h2[i], h3[i], rates);
        acc[i] = if FIRST { y[i].axpy(&d, w_dt) } else { acc[i].axpy(&d, w_dt) };
        if !LAST {
            tmp[i] = y[i].axpy(&d, next_dt);
        }
    }
}

/// Noise applied to the stored coherence during a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    pub n_traj: usize,
}

/// Numerical settings of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Peak resonant optical depth.
    pub optical_depth: f64,
    /// Step as a fraction of the stability guard.
    pub dt_fraction: f64,
    /// Fixed step (s); checked against the guard.
    pub dt: Option<f64>,
    pub noise: Option<NoiseSpec>,
    /// Record spin-wave snapshots at event times.
    pub snapshots: bool,
    /// Steps between positivity checks (0 disables mid-segment checks).
    pub check_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            optical_depth: 0.1625,
            dt_fraction: 1.0,
            dt: None,
            noise: None,
            snapshots: true,
            check_every: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub label: String,
    pub spin_wave: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub time: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub max_trace_drift: f64,
    pub max_hermiticity_defect: f64,
    pub min_eigenvalue: f64,
    pub steps: usize,
    pub dark_intervals: usize,
    pub rf_pulses: usize,
    pub flip_count: u32,
    pub phase_matching_factor: f64,
    pub noise_envelope: f64,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Diagnostics {
            max_trace_drift: 0.0,
            max_hermiticity_defect: 0.0,
            min_eigenvalue: f64::INFINITY,
            steps: 0,
            dark_intervals: 0,
            rf_pulses: 0,
            flip_count: 0,
            phase_matching_factor: 1.0,
            noise_envelope: 1.0,
        }
    }
}

/// Time-resolved result of a run. Samples are the left ends of integration
/// steps, `dt` their lengths; dark intervals carry no samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub time: Vec<f64>,
    pub dt: Vec<f64>,
    /// Probe envelope entering the cell (rad/s).
    pub input: Vec<Complex64>,
    /// Probe envelope leaving the cell (rad/s).
    pub output: Vec<Complex64>,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<LogEntry>,
    pub diagnostics: Diagnostics,
    pub write_window: Option<(f64, f64)>,
    pub recall_window: Option<(f64, f64)>,
}

impl SimulationRecord {
    fn new() -> Self {
        SimulationRecord {
            time: Vec::new(),
            dt: Vec::new(),
            input: Vec::new(),
            output: Vec::new(),
            snapshots: Vec::new(),
            events: Vec::new(),
            diagnostics: Diagnostics::default(),
            write_window: None,
            recall_window: None,
        }
    }

    fn log(&mut self, time: f64, message: impl Into<String>) {
        self.events.push(LogEntry {
            time,
            message: message.into(),
        });
    }

    fn snapshot(&mut self, time: f64, label: &str, medium: &MediumState) {
        self.snapshots.push(Snapshot {
            time,
            label: label.to_string(),
            spin_wave: medium.spin_wave(),
        });
    }

    /// Storage efficiency (recall output energy over input energy).
    pub fn efficiency(&self) -> Result<f64> {
        crate::analysis::storage_efficiency(self)
    }
}

fn describe(e: &Event) -> String {
    match *e {
        Event::ProbePulse { duration, amplitude, .. } => format!("probe pulse ({duration:.3e} s, {amplitude:?})"),
        Event::CouplingSet { rabi_hz, ramp, .. } => format!("coupling -> {rabi_hz:.6e} Hz (ramp {ramp:.3e} s)"),
        Event::RfPulseAt { pulse, .. } => format!(
            "rf pulse area {:.6} rad phase {:.6} rad{}",
            pulse.area,
            pulse.phase,
            if pulse.instantaneous { "" } else { " (finite)" }
        ),
        Event::RecallAt { window, .. } => format!("recall window {window:.3e} s"),
        Event::ProbeSweep { span_hz, duration, .. } => format!("probe sweep {span_hz:.6e} Hz in {duration:.3e} s"),
    }
}

/// Execute a validated timeline.
pub fn run_sequence(
    sequence: &Sequence,
    grid: &Grid,
    geometry: &Geometry,
    classes: &[DetuningClass],
    scheme: &LevelScheme,
    opts: &RunOptions,
) -> Result<SimulationRecord> {
    let findings = validate(sequence, geometry);
    let errors: Vec<&str> = findings
        .iter()
        .filter(|f| f.severity == Severity::Error)
        .filter(|f| !(sequence.allow_odd_parity && f.kind == FindingKind::Parity))
        .map(|f| f.message.as_str())
        .collect();
    if !errors.is_empty() {
        return Err(Error::Usage(format!("sequence failed validation: {}", errors.join("; "))));
    }
    geometry.validate()?;
    scheme.validate()?;
    if !(opts.dt_fraction > 0.0 && opts.dt_fraction <= 1.0) {
        return Err(Error::config("dt_fraction must lie in (0, 1]"));
    }
    let prop = Propagator::new(grid, classes, scheme, opts.optical_depth)?;
    let mut medium = MediumState::new(grid, classes)?;
    let mut rec = SimulationRecord::new();
    rec.write_window = sequence.write_window();
    rec.recall_window = sequence.recall().map(|(t, w)| (t, t + w));

    let max_opt = classes.iter().map(|c| c.delta_opt.abs()).fold(0.0, f64::max);
    let max_spin = classes.iter().map(|c| c.delta_spin.abs()).fold(0.0, f64::max);
    let static_rate = max_opt.max(max_spin).max(scheme.gamma3);

    let noise_envelope = match &opts.noise {
        Some(n) if sequence.recall().is_some() => decay_envelope(sequence, &n.model, n.n_traj)?,
        _ => 1.0,
    };

    let pts = sequence.breakpoints();
    let mut free_cache: HashMap<u64, Vec<FreeFactors>> = HashMap::new();
    let mut busy_until = f64::NEG_INFINITY;
    let mut handled = vec![false; sequence.events.len()];
    let mut diag = Diagnostics::default();
    diag.noise_envelope = noise_envelope;

    let tol = |t: f64| 1e-12 * t.abs().max(1e-9);
    for (idx, &t) in pts.iter().enumerate() {
        // events taking effect at this breakpoint
        for (k, e) in sequence.events.iter().enumerate() {
            if handled[k] {
                continue;
            }
            let at = match *e {
                Event::RfPulseAt { t: tc, pulse } if !pulse.instantaneous => tc - 0.5 * pulse.duration,
                _ => e.time(),
            };
            if (at - t).abs() > tol(t) {
                continue;
            }
            handled[k] = true;
            rec.log(e.time(), describe(e));
            match *e {
                Event::RfPulseAt { pulse, .. } => {
                    if pulse.instantaneous {
                        medium.apply_rf_instantaneous(&pulse);
                    } else {
                        apply_finite_rf(&mut medium, &pulse, scheme)?;
                        busy_until = t + pulse.duration;
                    }
                    medium.flip();
                    diag.rf_pulses += 1;
                    if opts.snapshots {
                        rec.snapshot(e.time(), "rf_pulse", &medium);
                    }
                }
                Event::RecallAt { t: tr, .. } => {
                    let pm = phase_matching_factor(geometry, medium.flip_count, grid);
                    diag.phase_matching_factor = pm;
                    medium.scale_spin_coherence(pm * noise_envelope);
                    rec.log(
                        tr,
                        format!(
                            "recall after {} flips: phase matching {pm:.6e}, noise envelope {noise_envelope:.6e}",
                            medium.flip_count
                        ),
                    );
                    if opts.snapshots {
                        rec.snapshot(tr, "recall", &medium);
                    }
                }
                Event::CouplingSet { t: tc, .. } => {
                    if opts.snapshots {
                        rec.snapshot(tc, "coupling_set", &medium);
                    }
                }
                _ => {}
            }
        }

        let Some(&b) = pts.get(idx + 1) else { break };
        let a = t;
        if b <= a || b <= busy_until + tol(b) {
            continue;
        }
        let a = a.max(busy_until);
        if sequence.optical_active(a, b) {
            let drive = sequence.segment_drive(a, b);
            let (probe_amp, probe_offset) = drive.probe_bounds();
            let rate = static_rate
                .max(probe_amp)
                .max(probe_offset)
                .max(drive.coupling.max_abs());
            let limit = 0.1 / rate;
            let dt_target = match opts.dt {
                Some(dt) => {
                    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
                        return Err(Error::StepSize {
                            dt,
                            limit,
                            context: Some(format!("segment [{a:.6e}, {b:.6e}] s")),
                        });
                    }
                    dt
                }
                None => limit * opts.dt_fraction,
            };
            let n = ((b - a) / dt_target).ceil().max(1.0) as usize;
            let dt = (b - a) / n as f64;
            let mut stepper = Stepper::new(&medium, scheme);
            let eval = |tt: f64| (drive.probe(tt), drive.coupling(tt));
            for i in 0..n {
                let ts = a + i as f64 * dt;
                let out = stepper.step(&prop, classes, eval, ts, dt);
                rec.time.push(ts);
                rec.dt.push(dt);
                rec.input.push(drive.probe(ts));
                rec.output.push(out);
                diag.steps += 1;
                if opts.check_every > 0 && (i + 1) % opts.check_every == 0 {
                    medium.atoms.clone_from(&stepper.y);
                    check_positivity(&medium, &mut diag, ts + dt)?;
                }
            }
            medium.atoms = stepper.y;
        } else {
            let dur = b - a;
            let factors = free_cache
                .entry(dur.to_bits())
                .or_insert_with(|| free_factors(classes, scheme, dur));
            medium.apply_free(factors, scheme, dur);
            diag.dark_intervals += 1;
        }
        check_positivity(&medium, &mut diag, b)?;
    }

    diag.flip_count = medium.flip_count;
    diag.max_hermiticity_defect = diag.max_hermiticity_defect.max(medium.max_hermiticity_defect());
    rec.diagnostics = diag;
    Ok(rec)
}

fn check_positivity(medium: &MediumState, diag: &mut Diagnostics, t: f64) -> Result<()> {
    let drift = medium.max_trace_drift();
    let min_eig = medium.min_eigenvalue();
    diag.max_trace_drift = diag.max_trace_drift.max(drift);
    diag.min_eigenvalue = diag.min_eigenvalue.min(min_eig);
    if !drift.is_finite() || !min_eig.is_finite() {
        return Err(Error::StepSize {
            dt: f64::NAN,
            limit: f64::NAN,
            context: Some(format!("state became non-finite at t = {t:.6e} s")),
        });
    }
    Ok(())
}

fn apply_finite_rf(medium: &mut MediumState, pulse: &RfPulse, scheme: &LevelScheme) -> Result<()> {
    let n_c = medium.classes.len();
    let classes = medium.classes.clone();
    medium
        .atoms
        .par_chunks_mut(n_c)
        .try_for_each(|slice| -> Result<()> {
            for (a, c) in slice.iter_mut().zip(&classes) {
                let r = apply_rf_pulse(&a.to_density(), pulse, c, scheme)?;
                *a = Atom::from_density(&r);
            }
            Ok(())
        })
}

/// Transmission of the record's input through the cell, sample by sample.
pub fn transmission_trace(record: &SimulationRecord) -> Vec<f64> {
    record
        .input
        .iter()
        .zip(&record.output)
        .map(|(i, o)| if i.norm_sqr() > 0.0 { o.norm_sqr() / i.norm_sqr() } else { f64::NAN })
        .collect()
}

/// Instantaneous probe offset (Hz) of a sweep sequence at each record sample.
pub fn sweep_frequency_axis(sequence: &Sequence, record: &SimulationRecord) -> Option<Vec<f64>> {
    let (t0, duration, span) = sequence.events.iter().find_map(|e| match *e {
        Event::ProbeSweep {
            t0, duration, span_hz, ..
        } => Some((t0, duration, span_hz)),
        _ => None,
    })?;
    Some(
        record
            .time
            .iter()
            .map(|&t| -0.5 * span + span * (t - t0) / duration)
            .collect(),
    )
}

/// Angular frequency bound used for a segment's step guard, in Hz.
pub fn guard_rate_hz(classes: &[DetuningClass], scheme: &LevelScheme) -> f64 {
    let max_opt = classes.iter().map(|c| c.delta_opt.abs()).fold(0.0, f64::max);
    rad_to_hz(max_opt.max(scheme.gamma3))
}
