//! Estimators: pulse energies, exponential decay fits, transparency widths,
//! linearity analysis, and an ideal heterodyne detection model.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::SimulationRecord;

/// Probe transmission versus probe detuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freq_hz: Vec<f64>,
    pub transmission: Vec<f64>,
}

impl Spectrum {
    pub fn new(freq_hz: Vec<f64>, transmission: Vec<f64>) -> Result<Self> {
        let s = Spectrum { freq_hz, transmission };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.freq_hz.len() != self.transmission.len() {
            return Err(Error::analysis("spectrum axis and values differ in length"));
        }
        if self.freq_hz.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::analysis("spectrum frequency axis must be strictly increasing"));
        }
        Ok(())
    }

    /// Linear interpolation of the transmission at `f`.
    pub fn at(&self, f: f64) -> Option<f64> {
        let i = self.freq_hz.partition_point(|&x| x <= f);
        if i == 0 || i == self.freq_hz.len() {
            return (self.freq_hz.first() == Some(&f)).then(|| self.transmission[0]);
        }
        let (f0, f1) = (self.freq_hz[i - 1], self.freq_hz[i]);
        let (t0, t1) = (self.transmission[i - 1], self.transmission[i]);
        Some(t0 + (t1 - t0) * (f - f0) / (f1 - f0))
    }
}

/// Full width at half the dip-to-peak contrast of the most prominent
/// transmission maximum flanked on both sides by lower transmission.
pub fn eit_fwhm(spectrum: &Spectrum) -> Result<f64> {
    spectrum.validate()?;
    let t = &spectrum.transmission;
    let f = &spectrum.freq_hz;
    let n = t.len();
    if n < 5 {
        return Err(Error::analysis("spectrum too short for a width estimate"));
    }
    let mut prefix_min = vec![0.0; n];
    let mut suffix_min = vec![0.0; n];
    prefix_min[0] = t[0];
    for i in 1..n {
        prefix_min[i] = prefix_min[i - 1].min(t[i]);
    }
    suffix_min[n - 1] = t[n - 1];
    for i in (0..n - 1).rev() {
        suffix_min[i] = suffix_min[i + 1].min(t[i]);
    }
    let mut best: Option<(usize, f64)> = None;
    for i in 1..n - 1 {
        if t[i] >= t[i - 1] && t[i] >= t[i + 1] {
            let contrast = t[i] - prefix_min[i - 1].max(suffix_min[i + 1]);
            if best.map_or(true, |(_, c)| contrast > c) {
                best = Some((i, contrast));
            }
        }
    }
    let scale = t.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let (peak, contrast) = match best {
        Some((i, c)) if c > 1e-9 * scale => (i, c),
        _ => return Err(Error::analysis("no transparency feature in spectrum")),
    };
    let half = t[peak] - 0.5 * contrast;
    let mut j = peak;
    while t[j] > half {
        j -= 1;
    }
    let left = f[j] + (half - t[j]) * (f[j + 1] - f[j]) / (t[j + 1] - t[j]);
    let mut k = peak;
    while t[k] > half {
        k += 1;
    }
    let right = f[k - 1] + (half - t[k - 1]) * (f[k] - f[k - 1]) / (t[k] - t[k - 1]);
    Ok(right - left)
}

/// Recalled pulse energy versus storage time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl DecayCurve {
    pub fn new(times: Vec<f64>, energies: Vec<f64>) -> Self {
        let std_errors = vec![0.0; times.len()];
        DecayCurve {
            times,
            energies,
            std_errors,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.energies.len() {
            return Err(Error::analysis("decay curve times and energies differ in length"));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::analysis("decay curve times must be strictly increasing"));
        }
        if self.energies.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::analysis("decay curve energies must be non-negative"));
        }
        Ok(())
    }
}

/// Result of fitting `A exp(-t / tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub amplitude: f64,
    pub tau: f64,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Least-squares fit of `A exp(-t/tau)`: log-linear warm start followed by
/// damped Gauss-Newton on the untransformed residuals.
pub fn fit_exponential(curve: &DecayCurve) -> Result<FitResult> {
    curve.validate()?;
    let n = curve.times.len();
    if n < 2 {
        return Err(Error::analysis("need at least two points to fit a decay"));
    }
    if curve.energies.iter().any(|e| *e <= 0.0) {
        return Err(Error::analysis("exponential fit needs positive energies"));
    }
    let t = &curve.times;
    if n == 2 {
        let (e1, e2) = (curve.energies[0], curve.energies[1]);
        let tau = (t[1] - t[0]) / (e1 / e2).ln();
        return Ok(FitResult {
            amplitude: e1 * (t[0] / tau).exp(),
            tau,
            residual_norm: 0.0,
            converged: tau.is_finite() && tau > 0.0,
            iterations: 0,
        });
    }
    // work with data normalized to unit peak so the result is scale-equivariant
    let scale = curve.energies.iter().cloned().fold(0.0, f64::max);
    let y: Vec<f64> = curve.energies.iter().map(|e| e / scale).collect();

    // log-linear warm start: ln y = ln A - k t
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let tm = t.iter().sum::<f64>() / n as f64;
    let lm = ly.iter().sum::<f64>() / n as f64;
    let sxy: f64 = t.iter().zip(&ly).map(|(a, b)| (a - tm) * (b - lm)).sum();
    let sxx: f64 = t.iter().map(|a| (a - tm) * (a - tm)).sum();
    let mut k = -sxy / sxx;
    let mut amp = (lm + k * tm).exp();

    let cost = |amp: f64, k: f64| -> f64 {
        t.iter()
            .zip(&y)
            .map(|(ti, yi)| {
                let r = amp * (-k * ti).exp() - yi;
                r * r
            })
            .sum()
    };
    let mut c = cost(amp, k);
    let mut lambda = 1e-6;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=500 {
        iterations = it;
        let (mut jaa, mut jak, mut jkk, mut ga, mut gk) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (ti, yi) in t.iter().zip(&y) {
            let e = (-k * ti).exp();
            let r = amp * e - yi;
            let da = e;
            let dk = -amp * ti * e;
            jaa += da * da;
            jak += da * dk;
            jkk += dk * dk;
            ga += da * r;
            gk += dk * r;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let a11 = jaa * (1.0 + lambda);
            let a22 = jkk * (1.0 + lambda);
            let det = a11 * a22 - jak * jak;
            if det == 0.0 {
                lambda *= 10.0;
                continue;
            }
            let sa = -(a22 * ga - jak * gk) / det;
            let sk = -(a11 * gk - jak * ga) / det;
            let (na, nk) = (amp + sa, k + sk);
            let nc = cost(na, nk);
            if nc <= c {
                let small = sa.abs() <= 1e-15 * amp.abs().max(1e-300) && sk.abs() <= 1e-15 * k.abs().max(1e-300);
                let stalled = c - nc <= 1e-30 * c.max(1e-300);
                amp = na;
                k = nk;
                c = nc;
                lambda = (lambda * 0.1).max(1e-15);
                accepted = true;
                if small || (stalled && it > 1) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left: at a minimum to working precision
            converged = true;
        }
        if converged {
            break;
        }
    }
    // undamped Gauss-Newton polish: the cost is flat to rounding near the
    // minimum, the gradient is not
    if converged {
        for _ in 0..20 {
            let (mut jaa, mut jak, mut jkk, mut ga, mut gk) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (ti, yi) in t.iter().zip(&y) {
                let e = (-k * ti).exp();
                let r = amp * e - yi;
                let dk = -amp * ti * e;
                jaa += e * e;
                jak += e * dk;
                jkk += dk * dk;
                ga += e * r;
                gk += dk * r;
            }
            let det = jaa * jkk - jak * jak;
            if !(det > 0.0) {
                break;
            }
            let sa = -(jkk * ga - jak * gk) / det;
            let sk = -(jaa * gk - jak * ga) / det;
            let (na, nk) = (amp + sa, k + sk);
            let nc = cost(na, nk);
            if !(nc <= c * (1.0 + 1e-9)) {
                break;
            }
            amp = na;
            k = nk;
            c = nc;
            if sa.abs() <= 1e-15 * amp.abs() && sk.abs() <= 1e-15 * k.abs() {
                break;
            }
        }
    }
    let tau = 1.0 / k;
    Ok(FitResult {
        amplitude: amp * scale,
        tau,
        residual_norm: c.sqrt() * scale,
        converged: converged && tau.is_finite() && tau > 0.0,
        iterations,
    })
}

/// Which probe envelope of a record to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Input,
    Output,
}

/// `int |Omega|^2 dt` over samples with `start <= t < end`.
pub fn pulse_energy(record: &SimulationRecord, channel: Channel, start: f64, end: f64) -> Result<f64> {
    if !(end > start) {
        return Err(Error::analysis(format!("empty energy window [{start}, {end})")));
    }
    let samples = match channel {
        Channel::Input => &record.input,
        Channel::Output => &record.output,
    };
    let mut energy = 0.0;
    let mut hit = false;
    for ((t, dt), v) in record.time.iter().zip(&record.dt).zip(samples) {
        if *t >= start && *t < end {
            energy += v.norm_sqr() * dt;
            hit = true;
        }
    }
    if !hit {
        return Err(Error::analysis(format!("no samples in window [{start:.3e}, {end:.3e})")));
    }
    Ok(energy)
}

/// Recalled output energy divided by the input probe energy.
pub fn storage_efficiency(record: &SimulationRecord) -> Result<f64> {
    let (w0, w1) = record
        .write_window
        .ok_or_else(|| Error::analysis("record has no write window"))?;
    let (r0, r1) = record
        .recall_window
        .ok_or_else(|| Error::analysis("record has no recall window"))?;
    let ein = pulse_energy(record, Channel::Input, w0, w1)?;
    if ein <= 0.0 {
        return Err(Error::analysis("input pulse carries no energy"));
    }
    Ok(pulse_energy(record, Channel::Output, r0, r1)? / ein)
}

/// Summary of a linearity measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub areas: Vec<f64>,
    pub input_energy: Vec<f64>,
    pub output_energy: Vec<f64>,
    /// Least-squares line through the low-area points.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub low_area_limit: f64,
    /// First area whose output deviates from the line by more than the
    /// threshold, if any.
    pub saturation_area: Option<f64>,
    pub deviation_threshold: f64,
}

/// Fit a line to `(input, output)` energies for areas `<= low_area_limit` and
/// report where the data first departs from it by more than `threshold`
/// (relative).
pub fn analyze_linearity(
    areas: &[f64],
    input_energy: &[f64],
    output_energy: &[f64],
    low_area_limit: f64,
    threshold: f64,
) -> Result<LinearityReport> {
    if areas.len() != input_energy.len() || areas.len() != output_energy.len() {
        return Err(Error::analysis("linearity arrays differ in length"));
    }
    let low: Vec<usize> = (0..areas.len()).filter(|&i| areas[i] <= low_area_limit).collect();
    if low.len() < 2 {
        return Err(Error::analysis("need at least two low-area points for the linear fit"));
    }
    let xs: Vec<f64> = low.iter().map(|&i| input_energy[i]).collect();
    let ys: Vec<f64> = low.iter().map(|&i| output_energy[i]).collect();
    let m = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / m;
    let ym = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let saturation_area = (0..areas.len())
        .find(|&i| {
            let pred = slope * input_energy[i] + intercept;
            ((output_energy[i] - pred) / pred).abs() > threshold
        })
        .map(|i| areas[i]);
    Ok(LinearityReport {
        areas: areas.to_vec(),
        input_energy: input_energy.to_vec(),
        output_energy: output_energy.to_vec(),
        slope,
        intercept,
        r_squared,
        low_area_limit,
        saturation_area,
        deviation_threshold: threshold,
    })
}

/// Band-limited response of the RF photodetector around the beat frequency.
///
/// Second-order maximally flat magnitude,
/// `|H(f)| = 1 / sqrt(1 + ((f - f_lo) / (B/2))^4)`, so the response is
/// down 3 dB at `f_lo +/- B/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorResponse {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
}

impl DetectorResponse {
    pub fn gain(&self, f_hz: f64) -> f64 {
        let x = (f_hz.abs() - self.center_hz) / (0.5 * self.bandwidth_hz);
        1.0 / (1.0 + x.powi(4)).sqrt()
    }
}

fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::analysis("need at least two samples"));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let tol = 1e-6 * dt;
    if times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > tol) {
        return Err(Error::analysis("heterodyne processing needs uniformly sampled input"));
    }
    Ok(dt)
}

/// Ideal detector signal `|E_lo + E(t) exp(-2 pi i f_lo t)|^2`.
pub fn heterodyne_trace(times: &[f64], envelope: &[Complex64], f_lo: f64, lo_amplitude: f64) -> Vec<f64> {
    times
        .iter()
        .zip(envelope)
        .map(|(&t, e)| {
            let carrier = Complex64::from_polar(1.0, -2.0 * PI * f_lo * t);
            (lo_amplitude + e * carrier).norm_sqr()
        })
        .collect()
}

/// Heterodyne trace of a record's output channel.
pub fn record_heterodyne(record: &SimulationRecord, f_lo: f64, lo_amplitude: f64) -> Vec<f64> {
    heterodyne_trace(&record.time, &record.output, f_lo, lo_amplitude)
}

/// Pass a real detector trace through the detector frequency response.
pub fn apply_detector(times: &[f64], trace: &[f64], detector: &DetectorResponse) -> Result<Vec<f64>> {
    let dt = uniform_step(times)?;
    let n = trace.len();
    let mut buf: Vec<Complex64> = trace.iter().map(|&v| v.into()).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = fft_freq(k, n, dt);
        // keep the DC (LO) level untouched: the detector is AC-coupled only
        // around the beat frequency in this model
        if k != 0 {
            *v *= detector.gain(f);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Ok(buf.iter().map(|v| v.re / n as f64).collect())
}

fn fft_freq(k: usize, n: usize, dt: f64) -> f64 {
    let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    kk / (n as f64 * dt)
}

/// Recover the complex signal envelope from a heterodyne trace by isolating
/// the beat band around `f_lo` and shifting it back to baseband.
pub fn demodulate(times: &[f64], trace: &[f64], f_lo: f64, lo_amplitude: f64) -> Result<Vec<Complex64>> {
    let dt = uniform_step(times)?;
    if f_lo * 2.0 * dt >= 1.0 {
        return Err(Error::analysis("local-oscillator frequency above the Nyquist limit"));
    }
    if lo_amplitude == 0.0 {
        return Err(Error::analysis("demodulation needs a non-zero LO"));
    }
    let n = trace.len();
    let mut buf: Vec<Complex64> = trace.iter().map(|&v| v.into()).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    // the signal term E exp(-i w t) sits near -f_lo
    for (k, v) in buf.iter_mut().enumerate() {
        let f = fft_freq(k, n, dt);
        if (f + f_lo).abs() >= 0.5 * f_lo {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Ok(times
        .iter()
        .zip(&buf)
        .map(|(&t, v)| v / n as f64 * Complex64::from_polar(1.0 / lo_amplitude, 2.0 * PI * f_lo * t))
        .collect())
}
