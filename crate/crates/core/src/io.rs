//! Configuration files, CSV tables and JSON summaries.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoherence::{CalibrationTargets, NoiseModel, Protocol, DEFAULT_DECAY_TIMES};
use crate::dynamics::RfPulse;
use crate::ensemble::{discretize_profile, DetuningClass, InhomogeneousProfile, LevelScheme};
use crate::error::{Error, Result};
use crate::propagation::{Geometry, GeometryMode, Grid, NoiseSpec, RunOptions, SimulationRecord, NOMINAL_WAVELENGTH};
use crate::sequence::{
    make_eit_sweep, make_store_recall_ddc_with, make_store_recall_simple_with, make_store_recall_train, ProbeAmplitude,
    PulseShape, Sequence, StoreOptions,
};

/// Global run configuration. All frequencies are Hz, times seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub optical_fwhm_hz: f64,
    pub spin_fwhm_hz: f64,
    pub n_opt: usize,
    pub n_spin: usize,
    /// Excited-state decay rate divided by 2 pi.
    pub gamma3_hz: f64,
    /// Optical homogeneous linewidth (FWHM).
    pub gamma_opt_hz: f64,
    /// Residual static spin linewidth (FWHM).
    pub gamma_spin_hz: f64,
    pub branching_b1: f64,

    pub optical_depth: f64,
    pub length_m: f64,
    pub n_z: usize,
    pub geometry: GeometryMode,
    pub lambda_p_m: f64,
    pub lambda_c_m: f64,
    pub residual_mismatch_co_per_m: f64,
    /// Step as a fraction of the stability guard.
    pub dt_fraction: f64,
    /// Fixed step (s) instead of the guard-derived one; rejected when it
    /// exceeds the guard.
    pub dt_s: Option<f64>,

    /// Rabi frequency (Hz) produced by 1 W of optical power. When set,
    /// powers given below override the matching Rabi frequencies and
    /// energies are also reported in joules.
    pub rabi_per_sqrt_watt: Option<f64>,
    pub coupling_power_w: Option<f64>,
    pub sweep_coupling_power_w: Option<f64>,
    pub coupling_rabi_hz: f64,
    /// Read-out coupling; defaults to the storage coupling.
    pub recall_rabi_hz: Option<f64>,
    pub sweep_coupling_rabi_hz: f64,

    pub probe_duration_s: f64,
    /// Write-pulse area in units of pi.
    pub probe_area_pi: f64,
    pub probe_shape: PulseShape,
    pub coupling_lag_s: f64,
    pub recall_window_s: f64,
    pub storage_time_s: f64,

    /// Sweep span; chosen from the coupling when unset.
    pub sweep_span_hz: Option<f64>,
    /// Sweep duration; chosen from the coupling when unset.
    pub sweep_duration_s: Option<f64>,
    pub sweep_probe_rabi_hz: f64,

    pub protocol: Protocol,
    /// Replace the protocol by this many equally spaced pi pulses.
    pub rf_pulse_count: Option<usize>,
    /// Accept an odd number of pi pulses whatever the geometry.
    pub allow_odd_parity: bool,

    pub rf_instantaneous: bool,
    pub rf_duration_s: f64,

    /// RMS spin-frequency noise (rad/s); noise is off unless both noise
    /// parameters are set.
    pub noise_sigma_rad_s: Option<f64>,
    pub noise_tau_c_s: Option<f64>,
    pub n_traj: usize,
    pub seed: u64,

    pub decay_times_s: Vec<f64>,
    pub t2_simple_target_s: f64,
    pub t2_ddc_target_s: f64,
    /// Linearity scan areas in units of pi.
    pub linearity_areas_pi: Vec<f64>,
    pub linearity_storage_s: f64,
    /// Largest area (units of pi) included in the linear fit.
    pub linearity_fit_max_pi: f64,
    /// Relative departure from the fit that marks saturation.
    pub linearity_threshold: f64,
}

/// Nominal Rabi frequency per square-root watt (Hz): 1 mW gives 20 kHz.
pub const NOMINAL_RABI_PER_SQRT_WATT: f64 = 632_455.532_033_675_9;

impl Default for Config {
    fn default() -> Self {
        let scheme = LevelScheme::default();
        let profile = InhomogeneousProfile::default();
        Config {
            optical_fwhm_hz: profile.optical_fwhm_hz,
            spin_fwhm_hz: profile.spin_fwhm_hz,
            n_opt: profile.n_opt,
            n_spin: profile.n_spin,
            gamma3_hz: scheme.gamma3 / (2.0 * std::f64::consts::PI),
            gamma_opt_hz: 2500.0,
            gamma_spin_hz: 0.0,
            branching_b1: scheme.branching_b1,
            optical_depth: 0.1625,
            length_m: 4e-3,
            n_z: Grid::default().n_z,
            geometry: GeometryMode::Counter,
            lambda_p_m: NOMINAL_WAVELENGTH,
            lambda_c_m: NOMINAL_WAVELENGTH,
            residual_mismatch_co_per_m: 100.0,
            dt_fraction: 1.0,
            dt_s: None,
            rabi_per_sqrt_watt: None,
            coupling_power_w: None,
            sweep_coupling_power_w: None,
            coupling_rabi_hz: NOMINAL_RABI_PER_SQRT_WATT * 0.01f64.sqrt(),
            recall_rabi_hz: None,
            sweep_coupling_rabi_hz: NOMINAL_RABI_PER_SQRT_WATT * 0.001f64.sqrt(),
            probe_duration_s: 20e-6,
            probe_area_pi: 0.01,
            probe_shape: PulseShape::Square,
            coupling_lag_s: 0.0,
            recall_window_s: 200e-6,
            storage_time_s: 0.1,
            sweep_span_hz: None,
            sweep_duration_s: None,
            sweep_probe_rabi_hz: 10.0,
            protocol: Protocol::Simple,
            rf_pulse_count: None,
            allow_odd_parity: false,
            rf_instantaneous: true,
            rf_duration_s: RfPulse::DEFAULT_DURATION,
            noise_sigma_rad_s: None,
            noise_tau_c_s: None,
            n_traj: 10_000,
            seed: 0,
            decay_times_s: DEFAULT_DECAY_TIMES.to_vec(),
            t2_simple_target_s: 0.35,
            t2_ddc_target_s: 2.3,
            linearity_areas_pi: vec![0.02, 0.04, 0.06, 0.08, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0],
            linearity_storage_s: 0.1,
            linearity_fit_max_pi: 0.1,
            linearity_threshold: 0.1,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme()?;
        self.profile().validate()?;
        self.grid()?;
        self.geometry().validate()?;
        self.rf_pulse().validate()?;
        let positive = [
            ("optical_depth", self.optical_depth >= 0.0),
            ("dt_fraction", self.dt_fraction > 0.0 && self.dt_fraction <= 1.0),
            ("probe_duration_s", self.probe_duration_s > 0.0),
            ("probe_area_pi", self.probe_area_pi > 0.0),
            ("coupling_lag_s", self.coupling_lag_s >= 0.0),
            ("recall_window_s", self.recall_window_s > 0.0),
            ("storage_time_s", self.storage_time_s > 0.0),
            ("sweep_span_hz", self.sweep_span_hz.map_or(true, |v| v > 0.0)),
            ("sweep_duration_s", self.sweep_duration_s.map_or(true, |v| v > 0.0)),
            ("linearity_fit_max_pi", self.linearity_fit_max_pi > 0.0),
            ("linearity_threshold", self.linearity_threshold > 0.0),
            ("sweep_probe_rabi_hz", self.sweep_probe_rabi_hz > 0.0),
            ("coupling_rabi_hz", self.coupling_rabi_hz >= 0.0),
            ("sweep_coupling_rabi_hz", self.sweep_coupling_rabi_hz >= 0.0),
            ("n_traj", self.n_traj >= 100),
            ("linearity_storage_s", self.linearity_storage_s > 0.0),
            ("t2 targets", self.t2_simple_target_s > 0.0 && self.t2_ddc_target_s > self.t2_simple_target_s),
        ];
        for (name, ok) in positive {
            if !ok {
                return Err(Error::config(format!("invalid value for {name}")));
            }
        }
        if let Some(k) = self.rabi_per_sqrt_watt {
            if !(k > 0.0) {
                return Err(Error::config("rabi_per_sqrt_watt must be positive"));
            }
        }
        for p in [self.coupling_power_w, self.sweep_coupling_power_w].into_iter().flatten() {
            if !(p >= 0.0) {
                return Err(Error::config("optical powers must be non-negative"));
            }
        }
        if self.noise_sigma_rad_s.is_some() != self.noise_tau_c_s.is_some() {
            return Err(Error::config("set both noise_sigma_rad_s and noise_tau_c_s, or neither"));
        }
        if let Some(m) = self.noise_model() {
            m.validate()?;
        }
        if self.decay_times_s.len() < 3 || self.decay_times_s.windows(2).any(|w| !(w[1] > w[0])) || self.decay_times_s[0] <= 0.0 {
            return Err(Error::config("decay_times_s needs >= 3 increasing positive times"));
        }
        if self.linearity_areas_pi.is_empty() || self.linearity_areas_pi.windows(2).any(|w| !(w[1] > w[0])) || self.linearity_areas_pi[0] <= 0.0 {
            return Err(Error::config("linearity_areas_pi must be sorted, positive and non-empty"));
        }
        Ok(())
    }

    pub fn scheme(&self) -> Result<LevelScheme> {
        LevelScheme::from_linewidths_hz(self.gamma3_hz, self.gamma_opt_hz, self.branching_b1, self.gamma_spin_hz)
    }

    pub fn profile(&self) -> InhomogeneousProfile {
        InhomogeneousProfile {
            optical_fwhm_hz: self.optical_fwhm_hz,
            spin_fwhm_hz: self.spin_fwhm_hz,
            n_opt: self.n_opt,
            n_spin: self.n_spin,
        }
    }

    pub fn classes(&self) -> Result<Vec<DetuningClass>> {
        discretize_profile(&self.profile())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.length_m, self.n_z)
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            mode: self.geometry,
            lambda_p: self.lambda_p_m,
            lambda_c: self.lambda_c_m,
            residual_mismatch_co: self.residual_mismatch_co_per_m,
        }
    }

    pub fn rf_pulse(&self) -> RfPulse {
        RfPulse {
            duration: self.rf_duration_s,
            instantaneous: self.rf_instantaneous,
            ..RfPulse::pi()
        }
    }

    fn from_power(&self, power: Option<f64>, fallback: f64) -> f64 {
        match (self.rabi_per_sqrt_watt, power) {
            (Some(k), Some(p)) => k * p.sqrt(),
            _ => fallback,
        }
    }

    /// Storage coupling Rabi frequency (Hz).
    pub fn storage_coupling_hz(&self) -> f64 {
        self.from_power(self.coupling_power_w, self.coupling_rabi_hz)
    }

    pub fn recall_coupling_hz(&self) -> f64 {
        self.recall_rabi_hz.unwrap_or_else(|| self.storage_coupling_hz())
    }

    pub fn sweep_coupling_hz(&self) -> f64 {
        self.from_power(self.sweep_coupling_power_w, self.sweep_coupling_rabi_hz)
    }

    pub fn store_options(&self) -> StoreOptions {
        StoreOptions {
            probe_duration: self.probe_duration_s,
            probe: ProbeAmplitude::Area(self.probe_area_pi * std::f64::consts::PI),
            shape: self.probe_shape,
            coupling_rabi_hz: self.storage_coupling_hz(),
            recall_rabi_hz: self.recall_coupling_hz(),
            coupling_lag: self.coupling_lag_s,
            rf: self.rf_pulse(),
            recall_window: self.recall_window_s,
        }
    }

    pub fn noise_model(&self) -> Option<NoiseModel> {
        match (self.noise_sigma_rad_s, self.noise_tau_c_s) {
            (Some(sigma), Some(tau_c)) => Some(NoiseModel {
                sigma,
                tau_c,
                seed: self.seed,
            }),
            _ => None,
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            optical_depth: self.optical_depth,
            dt_fraction: self.dt_fraction,
            dt: self.dt_s,
            noise: self.noise_model().map(|model| NoiseSpec {
                model,
                n_traj: self.n_traj,
            }),
            ..Default::default()
        }
    }

    /// Store-and-recall timeline for the configured protocol and storage
    /// time.
    pub fn store_sequence(&self) -> Result<Sequence> {
        self.store_sequence_for(self.protocol, self.storage_time_s)
    }

    pub fn store_sequence_for(&self, protocol: Protocol, t_store: f64) -> Result<Sequence> {
        let opts = self.store_options();
        match (self.rf_pulse_count, protocol) {
            (Some(n), _) => make_store_recall_train(t_store, n, self.allow_odd_parity, &opts),
            (None, Protocol::Simple) => make_store_recall_simple_with(t_store, &opts),
            (None, Protocol::Ddc) => make_store_recall_ddc_with(Protocol::ddc_count(t_store), self.allow_odd_parity, &opts),
        }
    }

    /// Sweep span and duration (Hz, s) for a given coupling. Unset values
    /// cover 1.6 times the coupling Rabi frequency (at least 60 kHz) and
    /// keep the chirp slow compared with the transparency response time.
    pub fn sweep_range(&self, coupling_hz: f64) -> (f64, f64) {
        let span = self.sweep_span_hz.unwrap_or_else(|| (1.6 * coupling_hz).max(60e3));
        let duration = self
            .sweep_duration_s
            .unwrap_or_else(|| 4e-3 * (1e5 / coupling_hz.max(1.0)).min(1.0));
        (span, duration)
    }

    pub fn sweep_sequence(&self, coupling_hz: f64) -> Result<Sequence> {
        let (span, duration) = self.sweep_range(coupling_hz);
        make_eit_sweep(span, duration, coupling_hz, self.sweep_probe_rabi_hz)
    }

    pub fn calibration_targets(&self) -> CalibrationTargets {
        CalibrationTargets {
            t2_simple: self.t2_simple_target_s,
            t2_ddc: self.t2_ddc_target_s,
        }
    }

    /// Convert a normalized energy `int |Omega|^2 dt` (rad^2/s) to joules,
    /// when the power scale is known.
    pub fn energy_joules(&self, energy: f64) -> Option<f64> {
        let k = self.rabi_per_sqrt_watt?;
        let k_rad = 2.0 * std::f64::consts::PI * k;
        Some(energy / (k_rad * k_rad))
    }
}

/// Format a value so that parsing it back gives the same bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:e}")
}

/// Serialize a table with a header row and full-precision values.
pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> Result<String> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::analysis(format!(
                "row {i} has {} values for {} columns",
                row.len(),
                header.len()
            )));
        }
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", format_f64(*v));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    std::fs::write(path, csv_string(header, rows)?)?;
    Ok(())
}

/// Parse a table written by [`csv_string`].
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::config("empty CSV"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::config(format!("CSV line {}: {e}", i + 2)))?;
        if row.len() != header.len() {
            return Err(Error::config(format!("CSV line {} has {} fields", i + 2, row.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    parse_csv(&std::fs::read_to_string(path)?)
}

pub const RECORD_HEADER: [&str; 6] = ["t_s", "dt_s", "input_re", "input_im", "output_re", "output_im"];

/// Envelope table of a record: time, step, and input/output envelopes
/// (rad/s).
pub fn record_rows(record: &SimulationRecord) -> Vec<Vec<f64>> {
    record
        .time
        .iter()
        .zip(&record.dt)
        .zip(record.input.iter().zip(&record.output))
        .map(|((t, dt), (i, o))| vec![*t, *dt, i.re, i.im, o.re, o.im])
        .collect()
}

pub fn write_record_csv(path: &Path, record: &SimulationRecord) -> Result<()> {
    write_csv(path, &RECORD_HEADER, &record_rows(record))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
