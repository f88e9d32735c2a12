//! End-to-end runs: transmission sweeps, store/recall, decay and linearity
//! scans, and noise calibration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze_linearity, eit_fwhm, fit_exponential, pulse_energy, Channel, DecayCurve, FitResult, LinearityReport, Spectrum};
use crate::decoherence::{calibrate, coherence_analytic, CalibrationOptions, CalibrationReport, NoiseModel, Protocol, TogglingFrame};
use crate::ensemble::{eit_width_analytic, hz_to_rad};
use crate::error::{Error, Result};
use crate::io::Config;
use crate::propagation::{run_sequence, sweep_frequency_axis, transmission_trace, Diagnostics, LogEntry, SimulationRecord, Snapshot};
use crate::sequence::Sequence;

/// Run `sequence` with the medium, geometry and numerics of `cfg`.
pub fn simulate(cfg: &Config, sequence: &Sequence) -> Result<SimulationRecord> {
    run_sequence(
        sequence,
        &cfg.grid()?,
        &cfg.geometry(),
        &cfg.classes()?,
        &cfg.scheme()?,
        &cfg.run_options(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub coupling_rabi_hz: f64,
    pub span_hz: f64,
    pub duration_s: f64,
    pub probe_rabi_hz: f64,
    pub optical_depth: f64,
    /// Intensity transmission at zero probe offset.
    pub resonant_transmission: f64,
    pub min_transmission: f64,
    pub max_transmission: f64,
    /// Width of the transparency window; absent with the coupling off or
    /// when no window is found.
    pub eit_fwhm_hz: Option<f64>,
    /// Steady-state thin-medium width for comparison.
    pub analytic_eit_fwhm_hz: Option<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub summary: SweepSummary,
    pub spectrum: Spectrum,
    pub record: SimulationRecord,
}

impl SweepOutcome {
    pub const HEADER: [&'static str; 7] = ["t_s", "offset_hz", "transmission", "input_re", "input_im", "output_re", "output_im"];

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let r = &self.record;
        (0..r.time.len())
            .map(|i| {
                vec![
                    r.time[i],
                    self.spectrum.freq_hz[i],
                    self.spectrum.transmission[i],
                    r.input[i].re,
                    r.input[i].im,
                    r.output[i].re,
                    r.output[i].im,
                ]
            })
            .collect()
    }
}

/// Sweep a weak probe across the line at a fixed coupling.
pub fn run_sweep(cfg: &Config, coupling_hz: f64) -> Result<SweepOutcome> {
    let seq = cfg.sweep_sequence(coupling_hz)?;
    let (span_hz, duration_s) = cfg.sweep_range(coupling_hz);
    let record = simulate(cfg, &seq)?;
    let freq = sweep_frequency_axis(&seq, &record).ok_or_else(|| Error::analysis("sweep record has no frequency axis"))?;
    let spectrum = Spectrum::new(freq, transmission_trace(&record))?;
    let resonant_transmission = spectrum
        .at(0.0)
        .ok_or_else(|| Error::analysis("sweep does not cover zero offset"))?;
    let (min, max) = spectrum
        .transmission
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    let (eit, analytic) = if coupling_hz > 0.0 {
        let classes = cfg.classes()?;
        (
            eit_fwhm(&spectrum).ok(),
            eit_width_analytic(&classes, &cfg.scheme()?, hz_to_rad(coupling_hz)).ok(),
        )
    } else {
        (None, None)
    };
    Ok(SweepOutcome {
        summary: SweepSummary {
            coupling_rabi_hz: coupling_hz,
            span_hz,
            duration_s,
            probe_rabi_hz: cfg.sweep_probe_rabi_hz,
            optical_depth: cfg.optical_depth,
            resonant_transmission,
            min_transmission: min,
            max_transmission: max,
            eit_fwhm_hz: eit,
            analytic_eit_fwhm_hz: analytic,
            diagnostics: record.diagnostics.clone(),
        },
        spectrum,
        record,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSummary {
    pub label: String,
    /// Coupling-off to recall (s).
    pub storage_time_s: f64,
    pub rf_pulses: usize,
    pub efficiency: f64,
    /// `int |Omega|^2 dt` of the write pulse (rad^2/s).
    pub input_energy: f64,
    pub output_energy: f64,
    pub input_energy_j: Option<f64>,
    pub output_energy_j: Option<f64>,
    pub diagnostics: Diagnostics,
    pub events: Vec<LogEntry>,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Debug, Clone)]
pub struct StoreOutcome {
    pub summary: StoreSummary,
    pub record: SimulationRecord,
}

/// Run a store-and-recall timeline and measure its energies.
pub fn run_store(cfg: &Config, sequence: &Sequence) -> Result<StoreOutcome> {
    let record = simulate(cfg, sequence)?;
    let (w0, w1) = record.write_window.ok_or_else(|| Error::analysis("timeline has no write pulse"))?;
    let (r0, r1) = record.recall_window.ok_or_else(|| Error::analysis("timeline has no recall"))?;
    let input_energy = pulse_energy(&record, Channel::Input, w0, w1)?;
    let output_energy = pulse_energy(&record, Channel::Output, r0, r1)?;
    if !(input_energy > 0.0) {
        return Err(Error::analysis("write pulse carries no energy"));
    }
    Ok(StoreOutcome {
        summary: StoreSummary {
            label: sequence.label.clone(),
            storage_time_s: r0 - sequence.storage_start(),
            rf_pulses: sequence.rf_pulse_count(),
            efficiency: output_energy / input_energy,
            input_energy,
            output_energy,
            input_energy_j: cfg.energy_joules(input_energy),
            output_energy_j: cfg.energy_joules(output_energy),
            diagnostics: record.diagnostics.clone(),
            events: record.events.clone(),
            snapshots: record.snapshots.clone(),
        },
        record,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub protocol: Protocol,
    pub requested_s: f64,
    pub storage_time_s: f64,
    pub rf_pulses: usize,
    pub efficiency: f64,
    pub noise_envelope: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub model: NoiseModel,
    pub n_traj: usize,
    /// Present when the noise model came from a calibration in this run.
    pub calibration: Option<CalibrationReport>,
    pub points: Vec<DecayPoint>,
    pub fit_simple: FitResult,
    pub fit_ddc: FitResult,
    pub tau_ratio: f64,
}

impl DecaySummary {
    pub const HEADER: [&'static str; 6] = ["protocol", "requested_s", "storage_time_s", "rf_pulses", "efficiency", "noise_envelope"];

    /// Table rows; the protocol column is 0 for simple, 1 for bang-bang.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .map(|p| {
                vec![
                    if p.protocol == Protocol::Simple { 0.0 } else { 1.0 },
                    p.requested_s,
                    p.storage_time_s,
                    p.rf_pulses as f64,
                    p.efficiency,
                    p.noise_envelope,
                ]
            })
            .collect()
    }

    pub fn curve(&self, protocol: Protocol) -> DecayCurve {
        decay_curve(&self.points, protocol)
    }
}

fn decay_curve(points: &[DecayPoint], protocol: Protocol) -> DecayCurve {
    let pts: Vec<&DecayPoint> = points.iter().filter(|p| p.protocol == protocol).collect();
    DecayCurve::new(
        pts.iter().map(|p| p.storage_time_s).collect(),
        pts.iter().map(|p| p.efficiency).collect(),
    )
}

/// Noise model from the config, or from a calibration to the configured
/// targets when none is set.
pub fn noise_model_or_calibrate(cfg: &Config) -> Result<(NoiseModel, Option<CalibrationReport>)> {
    match cfg.noise_model() {
        Some(m) => Ok((m, None)),
        None => {
            let report = run_calibration(cfg)?;
            Ok((report.model()?, Some(report)))
        }
    }
}

/// Store and recall under noise at every configured storage time, for both
/// protocols, and fit the recalled energy against storage time.
pub fn run_decay(cfg: &Config, model: &NoiseModel, calibration: Option<CalibrationReport>) -> Result<DecaySummary> {
    let noisy = Config {
        noise_sigma_rad_s: Some(model.sigma),
        noise_tau_c_s: Some(model.tau_c),
        seed: model.seed,
        ..cfg.clone()
    };
    let jobs: Vec<(Protocol, f64)> = [Protocol::Simple, Protocol::Ddc]
        .iter()
        .flat_map(|&p| cfg.decay_times_s.iter().map(move |&t| (p, t)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(protocol, t)| {
            let seq = noisy.store_sequence_for(protocol, t)?;
            let out = run_store(&noisy, &seq)?;
            Ok(DecayPoint {
                protocol,
                requested_s: t,
                storage_time_s: out.summary.storage_time_s,
                rf_pulses: out.summary.rf_pulses,
                efficiency: out.summary.efficiency,
                noise_envelope: out.record.diagnostics.noise_envelope,
                diagnostics: out.record.diagnostics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = |protocol| fit_exponential(&decay_curve(&points, protocol));
    let fit_simple = fit(Protocol::Simple)?;
    let fit_ddc = fit(Protocol::Ddc)?;
    Ok(DecaySummary {
        model: *model,
        n_traj: cfg.n_traj,
        calibration,
        tau_ratio: fit_ddc.tau / fit_simple.tau,
        points,
        fit_simple,
        fit_ddc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearitySummary {
    pub storage_time_s: f64,
    pub efficiency: Vec<f64>,
    /// Areas in units of pi.
    pub report: LinearityReport,
    pub diagnostics: Vec<Diagnostics>,
}

impl LinearitySummary {
    pub const HEADER: [&'static str; 4] = ["area_pi", "input_energy", "output_energy", "efficiency"];

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let r = &self.report;
        (0..r.areas.len())
            .map(|i| vec![r.areas[i], r.input_energy[i], r.output_energy[i], self.efficiency[i]])
            .collect()
    }
}

/// Recalled against input energy over the configured write-pulse areas.
pub fn run_linearity(cfg: &Config) -> Result<LinearitySummary> {
    let runs = cfg
        .linearity_areas_pi
        .par_iter()
        .map(|&a| {
            let c = Config {
                probe_area_pi: a,
                ..cfg.clone()
            };
            let seq = c.store_sequence_for(c.protocol, c.linearity_storage_s)?;
            run_store(&c, &seq)
        })
        .collect::<Result<Vec<_>>>()?;
    let ein: Vec<f64> = runs.iter().map(|r| r.summary.input_energy).collect();
    let eout: Vec<f64> = runs.iter().map(|r| r.summary.output_energy).collect();
    let report = analyze_linearity(
        &cfg.linearity_areas_pi,
        &ein,
        &eout,
        cfg.linearity_fit_max_pi,
        cfg.linearity_threshold,
    )?;
    Ok(LinearitySummary {
        storage_time_s: cfg.linearity_storage_s,
        efficiency: runs.iter().map(|r| r.summary.efficiency).collect(),
        report,
        diagnostics: runs.into_iter().map(|r| r.record.diagnostics).collect(),
    })
}

/// Fit the noise model to the configured decay-constant targets.
pub fn run_calibration(cfg: &Config) -> Result<CalibrationReport> {
    let opts = CalibrationOptions {
        storage_times: cfg.decay_times_s.clone(),
        seed: cfg.seed,
        ..Default::default()
    };
    calibrate(&cfg.calibration_targets(), &opts)
}

pub const CALIBRATION_HEADER: [&str; 4] = ["protocol", "requested_s", "storage_time_s", "energy_factor"];

/// Energy decay factor `C^2` predicted by `model` at the configured storage
/// times; the protocol column is 0 for simple, 1 for bang-bang.
pub fn calibration_table(cfg: &Config, model: &NoiseModel) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (code, protocol) in [(0.0, Protocol::Simple), (1.0, Protocol::Ddc)] {
        for &t in &cfg.decay_times_s {
            let frame = TogglingFrame::new(protocol.flip_times(t))?;
            let total = protocol.storage_time(t);
            let c = coherence_analytic(&frame, model, total);
            rows.push(vec![code, t, total, c * c]);
        }
    }
    Ok(rows)
}
