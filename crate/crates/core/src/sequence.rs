//! Experiment timelines: construction, validation and (de)serialization.
//!
//! Times are seconds and Rabi frequencies are Hz in every event; conversion
//! to angular units happens when drive functions are evaluated. The storage
//! origin is `t = 0`, the instant the coupling beam is switched off after the
//! write pulse, so write pulses sit at negative times.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::RfPulse;
use crate::ensemble::hz_to_rad;
use crate::error::{Error, Result};
use crate::propagation::{Geometry, GeometryMode};

/// Fraction of a ramped pulse spent on each raised-cosine edge.
pub const RAMP_FRACTION: f64 = 0.1;

/// Default length of the recall observation window (s).
pub const DEFAULT_RECALL_WINDOW: f64 = 200e-6;

/// Spacing of the bang-bang pulse train (s).
pub const DDC_SPACING: f64 = 4e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    Square,
    /// Square with raised-cosine edges, each `RAMP_FRACTION` of the duration.
    Ramped,
    /// Gaussian with FWHM equal to half the duration, truncated to the
    /// duration window.
    Gaussian,
}

impl PulseShape {
    /// Unit-peak envelope at fractional position `u` in [0, 1].
    pub fn envelope(self, u: f64) -> f64 {
        match self {
            PulseShape::Square => 1.0,
            PulseShape::Ramped => {
                let r = RAMP_FRACTION;
                if u < r {
                    0.5 * (1.0 - (PI * u / r).cos())
                } else if u > 1.0 - r {
                    0.5 * (1.0 - (PI * (1.0 - u) / r).cos())
                } else {
                    1.0
                }
            }
            PulseShape::Gaussian => {
                // fwhm = duration / 2
                let sigma = 0.5 / 2.354_820_045_030_949_3;
                let x = (u - 0.5) / sigma;
                (-0.5 * x * x).exp()
            }
        }
    }

    /// `int_0^1 envelope(u) du`, the area of the unit-peak, unit-length pulse.
    pub fn area_factor(self) -> f64 {
        match self {
            PulseShape::Square => 1.0,
            PulseShape::Ramped => 1.0 - RAMP_FRACTION,
            PulseShape::Gaussian => {
                let sigma = 0.5 / 2.354_820_045_030_949_3;
                // truncated at +-0.5, i.e. +-2.355 sigma
                sigma * (2.0 * PI).sqrt() * erf(0.5 / (sigma * 2f64.sqrt()))
            }
        }
    }
}

// Maclaurin series; only small arguments are needed here.
fn erf(x: f64) -> f64 {
    let mut sum = 0.0_f64;
    let mut term = x;
    let mut n = 0.0;
    while term.abs() > 1e-17 * sum.abs().max(1e-300) || n < 3.0 {
        sum += term / (2.0 * n + 1.0);
        n += 1.0;
        term *= -x * x / n;
        if n > 200.0 {
            break;
        }
    }
    2.0 / PI.sqrt() * sum
}

/// How the strength of a probe pulse is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeAmplitude {
    /// Pulse area `int Omega dt` (rad).
    Area(f64),
    /// Peak Rabi frequency (Hz).
    PeakRabiHz(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    ProbePulse {
        t0: f64,
        duration: f64,
        amplitude: ProbeAmplitude,
        shape: PulseShape,
        /// Carrier offset from the ensemble center (Hz).
        #[serde(default)]
        detuning_hz: f64,
    },
    /// Coupling Rabi frequency becomes `rabi_hz` at `t`, reached after a
    /// raised-cosine ramp of length `ramp` (0 for a step).
    CouplingSet {
        t: f64,
        rabi_hz: f64,
        #[serde(default)]
        ramp: f64,
    },
    /// RF pulse centred on `t`.
    RfPulseAt { t: f64, pulse: RfPulse },
    /// Start of the read-out window `[t, t + window)`.
    RecallAt {
        t: f64,
        #[serde(default = "default_recall_window")]
        window: f64,
    },
    /// Weak probe chirped linearly from `-span/2` to `+span/2` around the
    /// ensemble center.
    ProbeSweep {
        t0: f64,
        duration: f64,
        span_hz: f64,
        rabi_hz: f64,
    },
}

fn default_recall_window() -> f64 {
    DEFAULT_RECALL_WINDOW
}

impl Event {
    /// Time interval occupied by the event.
    pub fn span(&self) -> (f64, f64) {
        match *self {
            Event::ProbePulse { t0, duration, .. } | Event::ProbeSweep { t0, duration, .. } => (t0, t0 + duration),
            Event::CouplingSet { t, ramp, .. } => (t, t + ramp),
            Event::RfPulseAt { t, pulse } => {
                if pulse.instantaneous {
                    (t, t)
                } else {
                    (t - 0.5 * pulse.duration, t + 0.5 * pulse.duration)
                }
            }
            Event::RecallAt { t, window } => (t, t + window),
        }
    }

    pub fn start(&self) -> f64 {
        self.span().0
    }

    /// Sort key: the nominal time of the event.
    pub fn time(&self) -> f64 {
        match *self {
            Event::RfPulseAt { t, .. } => t,
            _ => self.start(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Event::ProbePulse { .. } => "probe_pulse",
            Event::CouplingSet { .. } => "coupling_set",
            Event::RfPulseAt { .. } => "rf_pulse",
            Event::RecallAt { .. } => "recall",
            Event::ProbeSweep { .. } => "probe_sweep",
        }
    }

    fn is_probe(&self) -> bool {
        matches!(self, Event::ProbePulse { .. } | Event::ProbeSweep { .. })
    }
}

/// Ordered list of events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub events: Vec<Event>,
    /// End of the simulated timeline (s).
    pub total_duration: f64,
    /// Odd RF pulse counts are deliberate (parity experiments).
    #[serde(default)]
    pub allow_odd_parity: bool,
    #[serde(default)]
    pub label: String,
}

/// Severity of a validation finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

/// What a validation finding is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Value,
    Ordering,
    Overlap,
    Parity,
    Recall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub kind: FindingKind,
    pub message: String,
}

impl Finding {
    fn error(kind: FindingKind, message: impl Into<String>) -> Self {
        Finding {
            severity: Severity::Error,
            kind,
            message: message.into(),
        }
    }

    fn warning(kind: FindingKind, message: impl Into<String>) -> Self {
        Finding {
            severity: Severity::Warning,
            kind,
            message: message.into(),
        }
    }
}

/// Knobs shared by the store/recall builders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreOptions {
    pub probe_duration: f64,
    pub probe: ProbeAmplitude,
    pub shape: PulseShape,
    pub coupling_rabi_hz: f64,
    /// Coupling Rabi frequency used for read-out.
    pub recall_rabi_hz: f64,
    /// Delay between the end of the probe and the coupling switch-off (s).
    pub coupling_lag: f64,
    pub rf: RfPulse,
    pub recall_window: f64,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            probe_duration: 20e-6,
            probe: ProbeAmplitude::Area(0.01 * PI),
            shape: PulseShape::Square,
            coupling_rabi_hz: 63.2e3,
            recall_rabi_hz: 63.2e3,
            coupling_lag: 0.0,
            rf: RfPulse::pi(),
            recall_window: DEFAULT_RECALL_WINDOW,
        }
    }
}

impl Sequence {
    pub fn new(mut events: Vec<Event>, total_duration: f64) -> Self {
        events.sort_by(|a, b| a.time().total_cmp(&b.time()));
        Sequence {
            events,
            total_duration,
            allow_odd_parity: false,
            label: String::new(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Earliest event time; the simulation starts here.
    pub fn start_time(&self) -> f64 {
        self.events.iter().map(|e| e.start()).fold(0.0, f64::min)
    }

    pub fn rf_pulses(&self) -> impl Iterator<Item = (f64, RfPulse)> + '_ {
        self.events.iter().filter_map(|e| match *e {
            Event::RfPulseAt { t, pulse } => Some((t, pulse)),
            _ => None,
        })
    }

    pub fn rf_pulse_count(&self) -> usize {
        self.rf_pulses().count()
    }

    pub fn rf_times(&self) -> Vec<f64> {
        self.rf_pulses().map(|(t, _)| t).collect()
    }

    /// First recall event as `(t, window)`.
    pub fn recall(&self) -> Option<(f64, f64)> {
        self.events.iter().find_map(|e| match *e {
            Event::RecallAt { t, window } => Some((t, window)),
            _ => None,
        })
    }

    pub fn recall_time(&self) -> Option<f64> {
        self.recall().map(|r| r.0)
    }

    /// Interval covered by the first probe pulse or sweep.
    pub fn write_window(&self) -> Option<(f64, f64)> {
        self.events.iter().find(|e| e.is_probe()).map(|e| e.span())
    }

    /// Start of storage: the last coupling switch-off before the first RF
    /// pulse or recall, or the origin if there is none.
    pub fn storage_start(&self) -> f64 {
        let limit = self
            .rf_times()
            .first()
            .copied()
            .or(self.recall_time())
            .unwrap_or(f64::INFINITY);
        self.events
            .iter()
            .filter_map(|e| match *e {
                Event::CouplingSet { t, rabi_hz, ramp } if rabi_hz == 0.0 && t <= limit => Some(t + ramp),
                _ => None,
            })
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
            .unwrap_or(0.0)
    }

    /// Coupling Rabi frequency (Hz) in effect at `t`, with ramps resolved.
    pub fn coupling_hz(&self, t: f64) -> f64 {
        let mut value = 0.0;
        for e in &self.events {
            if let Event::CouplingSet { t: ts, rabi_hz, ramp } = *e {
                if t < ts {
                    break;
                }
                if ramp > 0.0 && t < ts + ramp {
                    let u = (t - ts) / ramp;
                    let s = 0.5 * (1.0 - (PI * u).cos());
                    value += (rabi_hz - value) * s;
                } else {
                    value = rabi_hz;
                }
            }
        }
        value
    }

    /// Read the coupling schedule as the value just after `t`, so a switch
    /// exactly at `t` counts.
    fn coupling_after(&self, t: f64) -> f64 {
        let mut value = 0.0;
        for e in &self.events {
            if let Event::CouplingSet { t: ts, rabi_hz, .. } = *e {
                if ts > t {
                    break;
                }
                value = rabi_hz;
            }
        }
        value
    }

    /// All times at which the drive is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = vec![self.start_time(), self.total_duration];
        for e in &self.events {
            let (a, b) = e.span();
            pts.push(a);
            pts.push(b);
            if let Event::RfPulseAt { t, .. } = e {
                pts.push(*t);
            }
            if let Event::ProbePulse { t0, duration, shape: PulseShape::Ramped, .. } = *e {
                pts.push(t0 + RAMP_FRACTION * duration);
                pts.push(t0 + (1.0 - RAMP_FRACTION) * duration);
            }
        }
        pts.retain(|t| t.is_finite());
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * a.abs().max(b.abs()).max(1e-12));
        pts
    }

    /// Drive functions valid inside the open interval `(a, b)`, which must
    /// not contain a breakpoint.
    pub fn segment_drive(&self, a: f64, b: f64) -> SegmentDrive {
        let mid = 0.5 * (a + b);
        let probes = self
            .events
            .iter()
            .filter(|e| {
                let (s, f) = e.span();
                e.is_probe() && s <= mid && mid < f
            })
            .copied()
            .collect();
        let mut coupling = CouplingPiece::Constant(hz_to_rad(self.coupling_after(mid)));
        for e in &self.events {
            if let Event::CouplingSet { t, rabi_hz, ramp } = *e {
                if t > mid {
                    break;
                }
                if ramp > 0.0 && mid < t + ramp {
                    coupling = CouplingPiece::Ramp {
                        t0: t,
                        duration: ramp,
                        from: hz_to_rad(self.coupling_hz(t)),
                        to: hz_to_rad(rabi_hz),
                    };
                }
            }
        }
        SegmentDrive { probes, coupling }
    }

    /// Is any optical field on inside `(a, b)`?
    pub fn optical_active(&self, a: f64, b: f64) -> bool {
        let d = self.segment_drive(a, b);
        !d.probes.is_empty() || d.coupling.max_abs() > 0.0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingPiece {
    Constant(f64),
    Ramp { t0: f64, duration: f64, from: f64, to: f64 },
}

impl CouplingPiece {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            CouplingPiece::Constant(v) => v,
            CouplingPiece::Ramp { t0, duration, from, to } => {
                let u = ((t - t0) / duration).clamp(0.0, 1.0);
                from + (to - from) * 0.5 * (1.0 - (PI * u).cos())
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        match *self {
            CouplingPiece::Constant(v) => v.abs(),
            CouplingPiece::Ramp { from, to, .. } => from.abs().max(to.abs()),
        }
    }
}

/// Smooth drive functions for one integration segment, in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDrive {
    pub probes: Vec<Event>,
    pub coupling: CouplingPiece,
}

impl SegmentDrive {
    /// Complex probe envelope at the medium entrance. The carrier offset is
    /// carried in the phase so the frame stays referenced to the ensemble
    /// center.
    pub fn probe(&self, t: f64) -> Complex64 {
        let mut sum = Complex64::new(0.0, 0.0);
        for e in &self.probes {
            match *e {
                Event::ProbePulse {
                    t0,
                    duration,
                    amplitude,
                    shape,
                    detuning_hz,
                } => {
                    let u = (t - t0) / duration;
                    let peak = probe_peak_rad(amplitude, shape, duration);
                    let phase = -2.0 * PI * detuning_hz * (t - t0);
                    sum += Complex64::from_polar(peak * shape.envelope(u), phase);
                }
                Event::ProbeSweep {
                    t0,
                    duration,
                    span_hz,
                    rabi_hz,
                } => {
                    let s = t - t0;
                    let rate = span_hz / duration;
                    // instantaneous offset -span/2 + rate * s
                    let phase = -2.0 * PI * (-0.5 * span_hz * s + 0.5 * rate * s * s);
                    sum += Complex64::from_polar(hz_to_rad(rabi_hz), phase);
                }
                _ => {}
            }
        }
        sum
    }

    pub fn coupling(&self, t: f64) -> f64 {
        self.coupling.at(t)
    }

    /// Largest probe amplitude and carrier offset over the segment (rad/s).
    pub fn probe_bounds(&self) -> (f64, f64) {
        let mut amp = 0.0;
        let mut offset: f64 = 0.0;
        for e in &self.probes {
            match *e {
                Event::ProbePulse {
                    duration,
                    amplitude,
                    shape,
                    detuning_hz,
                    ..
                } => {
                    amp += probe_peak_rad(amplitude, shape, duration);
                    offset = offset.max(hz_to_rad(detuning_hz.abs()));
                }
                Event::ProbeSweep { span_hz, rabi_hz, .. } => {
                    amp += hz_to_rad(rabi_hz.abs());
                    offset = offset.max(hz_to_rad(0.5 * span_hz.abs()));
                }
                _ => {}
            }
        }
        (amp, offset)
    }
}

/// Peak probe Rabi frequency (rad/s).
pub fn probe_peak_rad(amplitude: ProbeAmplitude, shape: PulseShape, duration: f64) -> f64 {
    match amplitude {
        ProbeAmplitude::PeakRabiHz(f) => hz_to_rad(f),
        ProbeAmplitude::Area(a) => a / (duration * shape.area_factor()),
    }
}

/// Weak probe swept across `span_hz` in `duration` with the coupling held at
/// `coupling_rabi_hz` throughout.
pub fn make_eit_sweep(span_hz: f64, duration: f64, coupling_rabi_hz: f64, probe_rabi_hz: f64) -> Result<Sequence> {
    if !(span_hz > 0.0) || !(duration > 0.0) {
        return Err(Error::config("sweep span and duration must be positive"));
    }
    if !(coupling_rabi_hz >= 0.0) || !(probe_rabi_hz > 0.0) {
        return Err(Error::config("sweep Rabi frequencies must be non-negative and the probe non-zero"));
    }
    let events = vec![
        Event::CouplingSet {
            t: 0.0,
            rabi_hz: coupling_rabi_hz,
            ramp: 0.0,
        },
        Event::ProbeSweep {
            t0: 0.0,
            duration,
            span_hz,
            rabi_hz: probe_rabi_hz,
        },
    ];
    Ok(Sequence::new(events, duration).with_label("eit_sweep"))
}

/// Sweep rate (Hz/s) of the first sweep in a sequence.
pub fn sweep_rate(sequence: &Sequence) -> Option<f64> {
    sequence.events.iter().find_map(|e| match *e {
        Event::ProbeSweep { duration, span_hz, .. } => Some(span_hz / duration),
        _ => None,
    })
}

fn write_events(opts: &StoreOptions) -> Vec<Event> {
    let t0 = -opts.probe_duration;
    vec![
        Event::CouplingSet {
            t: t0,
            rabi_hz: opts.coupling_rabi_hz,
            ramp: 0.0,
        },
        Event::ProbePulse {
            t0,
            duration: opts.probe_duration,
            amplitude: opts.probe,
            shape: opts.shape,
            detuning_hz: 0.0,
        },
        Event::CouplingSet {
            t: opts.coupling_lag,
            rabi_hz: 0.0,
            ramp: 0.0,
        },
    ]
}

fn store_sequence(mut events: Vec<Event>, recall: f64, opts: &StoreOptions) -> Sequence {
    events.push(Event::CouplingSet {
        t: recall,
        rabi_hz: opts.recall_rabi_hz,
        ramp: 0.0,
    });
    events.push(Event::RecallAt {
        t: recall,
        window: opts.recall_window,
    });
    Sequence::new(events, recall + opts.recall_window)
}

/// Write, store for `t_store` with pi pulses at a quarter and three quarters
/// of the storage time, then recall.
pub fn make_store_recall_simple(t_store: f64, probe_duration: f64) -> Result<Sequence> {
    make_store_recall_simple_with(
        t_store,
        &StoreOptions {
            probe_duration,
            ..Default::default()
        },
    )
}

pub fn make_store_recall_simple_with(t_store: f64, opts: &StoreOptions) -> Result<Sequence> {
    check_store_options(opts)?;
    let guard = if opts.rf.instantaneous { 0.0 } else { opts.rf.duration };
    if !(t_store > 2.0 * guard) || !(0.25 * t_store - 0.5 * guard > opts.coupling_lag) {
        return Err(Error::config(format!(
            "storage time {t_store} s too short to fit the rephasing pulses"
        )));
    }
    let mut events = write_events(opts);
    for frac in [0.25, 0.75] {
        events.push(Event::RfPulseAt {
            t: frac * t_store,
            pulse: opts.rf,
        });
    }
    Ok(store_sequence(events, t_store, opts).with_label("store_simple"))
}

/// Bang-bang train: pi pulses at 2 ms + 4 ms k for k < n, recall at 4n ms.
pub fn make_store_recall_ddc(n: usize, allow_odd: bool) -> Result<Sequence> {
    make_store_recall_ddc_with(n, allow_odd, &StoreOptions::default())
}

pub fn make_store_recall_ddc_with(n: usize, allow_odd: bool, opts: &StoreOptions) -> Result<Sequence> {
    check_store_options(opts)?;
    if n == 0 {
        return Err(Error::config("bang-bang train needs at least one pulse"));
    }
    if n % 2 == 1 && !allow_odd {
        return Err(Error::config(format!(
            "odd rephasing count {n}: the spin-wave direction ends flipped, which breaks phase matching in counter-propagating geometry"
        )));
    }
    if !opts.rf.instantaneous && opts.rf.duration >= DDC_SPACING {
        return Err(Error::config("RF pulses longer than the bang-bang spacing"));
    }
    let mut events = write_events(opts);
    for k in 0..n {
        events.push(Event::RfPulseAt {
            t: 0.5 * DDC_SPACING + DDC_SPACING * k as f64,
            pulse: opts.rf,
        });
    }
    let recall = DDC_SPACING * n as f64;
    let mut seq = store_sequence(events, recall, opts).with_label("store_ddc");
    seq.allow_odd_parity = allow_odd;
    Ok(seq)
}

/// Write and recall separated by `t_store` with no RF pulses.
pub fn make_store_recall_bare(t_store: f64, opts: &StoreOptions) -> Result<Sequence> {
    check_store_options(opts)?;
    if !(t_store >= opts.coupling_lag) {
        return Err(Error::config("storage time shorter than the coupling lag"));
    }
    let events = write_events(opts);
    Ok(store_sequence(events, t_store, opts).with_label("store_bare"))
}

/// Write, store with `n` equally spaced pi pulses (first at half a spacing),
/// recall at `t_store`.
pub fn make_store_recall_train(t_store: f64, n: usize, allow_odd: bool, opts: &StoreOptions) -> Result<Sequence> {
    check_store_options(opts)?;
    if n == 0 {
        return make_store_recall_bare(t_store, opts);
    }
    let spacing = t_store / n as f64;
    if !(0.5 * spacing > opts.coupling_lag) {
        return Err(Error::config("storage time too short for the requested pulse train"));
    }
    let mut events = write_events(opts);
    for k in 0..n {
        events.push(Event::RfPulseAt {
            t: spacing * (k as f64 + 0.5),
            pulse: opts.rf,
        });
    }
    let mut seq = store_sequence(events, t_store, opts).with_label("store_train");
    seq.allow_odd_parity = allow_odd;
    Ok(seq)
}

fn check_store_options(opts: &StoreOptions) -> Result<()> {
    if !(opts.probe_duration > 0.0) {
        return Err(Error::config("probe duration must be positive"));
    }
    if !(opts.coupling_lag >= 0.0) || !(opts.recall_window > 0.0) {
        return Err(Error::config("coupling lag must be >= 0 and the recall window positive"));
    }
    if !(opts.coupling_rabi_hz >= 0.0) || !(opts.recall_rabi_hz >= 0.0) {
        return Err(Error::config("coupling Rabi frequencies must be non-negative"));
    }
    opts.rf.validate()
}

/// Static checks of a timeline against a beam geometry. Problems are
/// returned as findings, never raised.
pub fn validate(sequence: &Sequence, geometry: &Geometry) -> Vec<Finding> {
    let mut out = Vec::new();
    let ev = &sequence.events;

    if ev.windows(2).any(|w| w[1].time() < w[0].time()) {
        out.push(Finding::error(FindingKind::Ordering, "events are not in time order"));
    }
    for e in ev {
        let (a, b) = e.span();
        if !a.is_finite() || !b.is_finite() {
            out.push(Finding::error(FindingKind::Value, format!("{} has a non-finite time", e.name())));
        }
        match *e {
            Event::ProbePulse { duration, amplitude, .. } => {
                if !(duration > 0.0) {
                    out.push(Finding::error(FindingKind::Value, "probe pulse duration must be positive"));
                }
                let v = match amplitude {
                    ProbeAmplitude::Area(a) | ProbeAmplitude::PeakRabiHz(a) => a,
                };
                if !(v >= 0.0) || !v.is_finite() {
                    out.push(Finding::error(FindingKind::Value, "probe amplitude must be finite and non-negative"));
                }
            }
            Event::ProbeSweep {
                duration,
                span_hz,
                rabi_hz,
                ..
            } => {
                if !(duration > 0.0) || !(span_hz > 0.0) {
                    out.push(Finding::error(FindingKind::Value, "probe sweep needs positive span and duration"));
                }
                if !(rabi_hz >= 0.0) {
                    out.push(Finding::error(FindingKind::Value, "probe sweep Rabi frequency must be non-negative"));
                }
            }
            Event::CouplingSet { rabi_hz, ramp, .. } => {
                if !(rabi_hz >= 0.0) || !(ramp >= 0.0) {
                    out.push(Finding::error(FindingKind::Value, "coupling Rabi frequency and ramp must be non-negative"));
                }
            }
            Event::RfPulseAt { pulse, .. } => {
                if let Err(e) = pulse.validate() {
                    out.push(Finding::error(FindingKind::Value, e.to_string()));
                }
            }
            Event::RecallAt { window, .. } => {
                if !(window > 0.0) {
                    out.push(Finding::error(FindingKind::Value, "recall window must be positive"));
                }
            }
        }
        if b > sequence.total_duration * (1.0 + 1e-12) + 1e-15 {
            out.push(Finding::error(FindingKind::Ordering, format!(
                "{} at {a:.6e} s extends past the end of the sequence",
                e.name()
            )));
        }
    }

    // probes must not overlap each other
    let probes: Vec<(f64, f64)> = ev.iter().filter(|e| e.is_probe()).map(|e| e.span()).collect();
    for (i, p) in probes.iter().enumerate() {
        for q in &probes[i + 1..] {
            if p.0 < q.1 && q.0 < p.1 {
                out.push(Finding::error(FindingKind::Overlap, "probe pulses overlap"));
            }
        }
    }

    // finite RF pulses exclude optical drive
    let rf: Vec<(f64, RfPulse)> = sequence.rf_pulses().collect();
    for &(t, pulse) in &rf {
        if pulse.instantaneous {
            continue;
        }
        let (a, b) = (t - 0.5 * pulse.duration, t + 0.5 * pulse.duration);
        if probes.iter().any(|p| p.0 < b && a < p.1) {
            out.push(Finding::error(FindingKind::Overlap, format!("RF pulse at {t:.6e} s overlaps a probe pulse")));
        }
        let pts = sequence.breakpoints();
        let inside: Vec<f64> = pts.iter().copied().filter(|&x| x > a && x < b).collect();
        let mut edges = vec![a];
        edges.extend(inside);
        edges.push(b);
        if edges
            .windows(2)
            .any(|w| w[1] > w[0] && sequence.segment_drive(w[0], w[1]).coupling.max_abs() > 0.0)
        {
            out.push(Finding::error(FindingKind::Overlap, format!("RF pulse at {t:.6e} s overlaps the coupling field")));
        }
        for &(u, other) in &rf {
            if u > t && u - 0.5 * other.duration * (!other.instantaneous as u8 as f64) < b {
                out.push(Finding::error(FindingKind::Overlap, format!("RF pulses at {t:.6e} s and {u:.6e} s overlap")));
            }
        }
    }

    // parity
    let n = rf.len();
    if n % 2 == 1 {
        match geometry.mode {
            GeometryMode::Counter => out.push(Finding::error(FindingKind::Parity, 
                "odd rephasing count with counter-propagating geometry",
            )),
            GeometryMode::Co => out.push(Finding::warning(FindingKind::Parity, 
                "odd rephasing count: recall suffers the co-propagating residual mismatch",
            )),
        }
    }

    // recall after the last RF pulse
    match sequence.recall() {
        Some((t, _)) => {
            if let Some(last) = rf.iter().map(|&(u, p)| u + 0.5 * p.duration * (!p.instantaneous as u8 as f64)).reduce(f64::max) {
                if !(t > last) {
                    out.push(Finding::error(FindingKind::Recall, "recall must come after the last RF pulse"));
                }
            }
            if sequence.events.iter().filter(|e| matches!(e, Event::RecallAt { .. })).count() > 1 {
                out.push(Finding::error(FindingKind::Recall, "more than one recall event"));
            }
            if sequence.coupling_after(t) == 0.0 {
                out.push(Finding::warning(FindingKind::Recall, "coupling is off during the recall window"));
            }
        }
        None => {
            if n > 0 {
                out.push(Finding::warning(FindingKind::Recall, "RF pulses without a recall"));
            }
        }
    }
    out
}

/// True when `findings` contains no errors.
pub fn is_valid(findings: &[Finding]) -> bool {
    findings.iter().all(|f| f.severity != Severity::Error)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counter() -> Geometry {
        Geometry::default()
    }

    fn co() -> Geometry {
        Geometry {
            mode: GeometryMode::Co,
            ..Default::default()
        }
    }

    #[test]
    fn default_sweep_rate() {
        let s = make_eit_sweep(300e3, 4e-3, 20e3, 1e3).unwrap();
        assert!((sweep_rate(&s).unwrap() - 75e6).abs() < 1e-6);
        assert!(validate(&s, &counter()).is_empty());
    }

    #[test]
    fn zero_span_rejected_zero_coupling_allowed() {
        assert!(matches!(make_eit_sweep(0.0, 4e-3, 20e3, 1e3), Err(Error::Config(_))));
        let s = make_eit_sweep(300e3, 4e-3, 0.0, 1e3).unwrap();
        assert!(is_valid(&validate(&s, &counter())));
    }

    #[test]
    fn sweep_instantaneous_frequency_is_linear() {
        let s = make_eit_sweep(300e3, 4e-3, 0.0, 1e3).unwrap();
        let d = s.segment_drive(0.0, 4e-3);
        // numerical derivative of the phase gives -2 pi f(t)
        for t in [1e-4, 2e-3, 3.9e-3] {
            let h = 1e-9;
            let p1 = d.probe(t + h).arg();
            let p0 = d.probe(t - h).arg();
            let f = -(p1 - p0) / (2.0 * h) / (2.0 * PI);
            let expect = -150e3 + 75e6 * t;
            assert!((f - expect).abs() < 1.0, "{f} vs {expect}");
        }
    }

    #[test]
    fn simple_sequence_layout() {
        let s = make_store_recall_simple(0.1, 20e-6).unwrap();
        let rf = s.rf_times();
        assert!((rf[0] - 0.025).abs() < 1e-15 && (rf[1] - 0.075).abs() < 1e-15);
        assert_eq!(s.recall_time(), Some(0.1));
        assert_eq!(s.rf_pulse_count(), 2);
        assert!(validate(&s, &counter()).is_empty());
        let s = make_store_recall_simple(1.0, 20e-6).unwrap();
        assert_eq!(s.rf_times(), vec![0.25, 0.75]);
        assert_eq!(s.write_window(), Some((-20e-6, 0.0)));
        assert_eq!(s.storage_start(), 0.0);
    }

    #[test]
    fn too_short_storage_rejected() {
        let opts = StoreOptions {
            rf: RfPulse::pi().finite(),
            ..Default::default()
        };
        assert!(make_store_recall_simple_with(40e-6, &opts).is_err());
        assert!(make_store_recall_simple(0.0, 20e-6).is_err());
    }

    #[test]
    fn ddc_layout() {
        let s = make_store_recall_ddc(2, false).unwrap();
        assert_eq!(s.rf_times(), vec![0.002, 0.006]);
        assert_eq!(s.recall_time(), Some(0.008));
        let s = make_store_recall_ddc(250, false).unwrap();
        assert_eq!(s.recall_time(), Some(1.0));
        assert!(validate(&s, &counter()).is_empty());
        for n in [2, 4, 26, 100, 376, 500] {
            let s = make_store_recall_ddc(n, false).unwrap();
            assert_eq!(s.recall_time().unwrap(), 0.004 * n as f64);
        }
    }

    #[test]
    fn odd_ddc_needs_override_and_fails_counter_validation() {
        assert!(matches!(make_store_recall_ddc(3, false), Err(Error::Config(_))));
        let s = make_store_recall_ddc(3, true).unwrap();
        let f = validate(&s, &counter());
        assert!(f
            .iter()
            .any(|f| f.severity == Severity::Error && f.message.contains("odd rephasing count with counter-propagating geometry")));
        let f = validate(&s, &co());
        assert!(is_valid(&f));
        assert!(f.iter().any(|f| f.severity == Severity::Warning));
    }

    #[test]
    fn finite_rf_overlapping_probe_is_an_error() {
        let mut s = make_store_recall_simple_with(
            0.1,
            &StoreOptions {
                rf: RfPulse::pi().finite(),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(is_valid(&validate(&s, &counter())));
        s.events.push(Event::RfPulseAt {
            t: -10e-6,
            pulse: RfPulse::pi().finite(),
        });
        s.events.push(Event::RfPulseAt {
            t: 0.05,
            pulse: RfPulse::pi().finite(),
        });
        s.events.sort_by(|a, b| a.time().total_cmp(&b.time()));
        let f = validate(&s, &counter());
        assert!(f.iter().any(|f| f.message.contains("overlaps a probe")));
        assert!(f.iter().any(|f| f.message.contains("overlaps the coupling")));
    }

    #[test]
    fn recall_before_rf_is_an_error() {
        let mut s = make_store_recall_simple(0.1, 20e-6).unwrap();
        s.events.push(Event::RfPulseAt {
            t: 0.1 + 1e-4,
            pulse: RfPulse::pi(),
        });
        s.events.push(Event::RfPulseAt {
            t: 0.1 + 2e-4,
            pulse: RfPulse::pi(),
        });
        s.events.sort_by(|a, b| a.time().total_cmp(&b.time()));
        let f = validate(&s, &counter());
        assert!(f.iter().any(|f| f.message.contains("after the last RF")));
    }

    #[test]
    fn coupling_schedule_and_ramps() {
        let s = make_store_recall_simple(0.1, 20e-6).unwrap();
        assert_eq!(s.coupling_hz(-20e-6), 63.2e3);
        assert_eq!(s.coupling_hz(0.05), 0.0);
        assert_eq!(s.coupling_hz(0.1), 63.2e3);
        assert!(s.optical_active(-20e-6, 0.0));
        assert!(!s.optical_active(0.0, 0.025));
        let s = Sequence::new(
            vec![Event::CouplingSet {
                t: 0.0,
                rabi_hz: 10e3,
                ramp: 1e-3,
            }],
            2e-3,
        );
        assert!((s.coupling_hz(0.5e-3) - 5e3).abs() < 1e-9);
        let d = s.segment_drive(0.0, 1e-3);
        assert!((d.coupling(0.5e-3) - hz_to_rad(5e3)).abs() < 1e-6);
        assert!((d.coupling(1e-3) - hz_to_rad(10e3)).abs() < 1e-6);
    }

    #[test]
    fn probe_area_bookkeeping() {
        for shape in [PulseShape::Square, PulseShape::Ramped, PulseShape::Gaussian] {
            let s = Sequence::new(
                vec![Event::ProbePulse {
                    t0: 0.0,
                    duration: 20e-6,
                    amplitude: ProbeAmplitude::Area(0.3),
                    shape,
                    detuning_hz: 0.0,
                }],
                20e-6,
            );
            let pts = s.breakpoints();
            let mut area = 0.0;
            for w in pts.windows(2) {
                let d = s.segment_drive(w[0], w[1]);
                let n = 20000;
                let h = (w[1] - w[0]) / n as f64;
                for i in 0..n {
                    area += d.probe(w[0] + (i as f64 + 0.5) * h).norm() * h;
                }
            }
            assert!((area - 0.3).abs() < 1e-6, "{shape:?} {area}");
        }
    }

    #[test]
    fn erf_values() {
        assert!((erf(0.5) - 0.520_499_877_813_046_5).abs() < 1e-15);
        assert!((erf(1.665) - 0.981_460_618_086_203_3).abs() < 1e-14);
    }

    #[test]
    fn json_round_trip() {
        let s = make_store_recall_ddc(4, false).unwrap();
        let back = Sequence::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
    }
}
