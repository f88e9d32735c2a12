//! Spin-frequency noise and the coherence it leaves after a pulse sequence.
//!
//! The effective transition-frequency noise `dw(t)` is an Ornstein-Uhlenbeck
//! process. A spin coherence stored at `t = 0` picks up the phase
//! `phi(T) = int_0^T s(t) dw(t) dt`, where the toggling-frame sign `s(t)`
//! flips at every pi pulse; the surviving coherence is `|<exp(i phi)>|`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{fit_exponential, DecayCurve};
use crate::error::{Error, Result};
use crate::sequence::{Sequence, DDC_SPACING};

/// Stationary OU noise on the spin transition frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// RMS of the frequency noise (rad/s).
    pub sigma: f64,
    /// Correlation time (s); `f64::INFINITY` gives static noise.
    pub tau_c: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, tau_c: f64, seed: u64) -> Result<Self> {
        let m = NoiseModel { sigma, tau_c, seed };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::config("noise sigma must be finite and >= 0"));
        }
        if !(self.tau_c > 0.0) {
            return Err(Error::config("noise correlation time must be > 0"));
        }
        Ok(())
    }
}

/// Moments of one exact OU step of length `h`, for the pair
/// `(x(t+h), int_t^{t+h} x)` conditioned on `x(t)`.
#[derive(Debug, Clone, Copy)]
struct OuStep {
    a: f64,
    mean_int: f64,
    sd_x: f64,
    mix: f64,
    sd_int: f64,
}

impl OuStep {
    fn new(sigma: f64, tau: f64, h: f64) -> Self {
        if tau.is_infinite() {
            return OuStep {
                a: 1.0,
                mean_int: h,
                sd_x: 0.0,
                mix: 0.0,
                sd_int: 0.0,
            };
        }
        let u = h / tau;
        let em = (-u).exp_m1(); // a - 1
        let a = 1.0 + em;
        let var_x = sigma * sigma * -(-2.0 * u).exp_m1();
        // 2u - 3 + 4a - a^2, by series where it cancels
        let g = if u < 0.1 {
            let mut sum = 0.0;
            let mut pow = u * u * u;
            let mut fact = 6.0;
            let mut two_k = 8.0;
            for k in 3..24 {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sum += sign * (4.0 - two_k) * pow / fact;
                pow *= u;
                fact *= (k + 1) as f64;
                two_k *= 2.0;
            }
            sum
        } else {
            2.0 * u - 3.0 + 4.0 * a - a * a
        };
        let var_int = sigma * sigma * tau * tau * g;
        let cov = sigma * sigma * tau * em * em;
        let sd_x = var_x.sqrt();
        let mix = if sd_x > 0.0 { cov / sd_x } else { 0.0 };
        let sd_int = (var_int - mix * mix).max(0.0).sqrt();
        OuStep {
            a,
            mean_int: -tau * em,
            sd_x,
            mix,
            sd_int,
        }
    }

    /// Advance `x` and return the integral over the step.
    #[inline]
    fn advance(&self, x: &mut f64, rng: &mut ChaCha8Rng) -> f64 {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let int = self.mean_int * *x + self.mix * z1 + self.sd_int * z2;
        *x = self.a * *x + self.sd_x * z1;
        int
    }
}

fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Sample `n_steps` values of the noise at spacing `dt`, starting from the
/// stationary distribution.
pub fn sample_ou(model: &NoiseModel, dt: f64, n_steps: usize) -> Result<Vec<f64>> {
    model.validate()?;
    if !(dt > 0.0) || dt > model.tau_c / 10.0 {
        return Err(Error::config(format!(
            "OU step {dt:.3e} s must be positive and at most tau_c/10 = {:.3e} s",
            model.tau_c / 10.0
        )));
    }
    let mut out = Vec::with_capacity(n_steps);
    if n_steps == 0 {
        return Ok(out);
    }
    if model.sigma == 0.0 {
        out.resize(n_steps, 0.0);
        return Ok(out);
    }
    let mut rng = trajectory_rng(model.seed, 0);
    let a = if model.tau_c.is_infinite() { 1.0 } else { (-dt / model.tau_c).exp() };
    let kick = model.sigma * if model.tau_c.is_infinite() { 0.0 } else { (-(-2.0 * dt / model.tau_c).exp_m1()).sqrt() };
    let z: f64 = StandardNormal.sample(&mut rng);
    let mut x = model.sigma * z;
    out.push(x);
    for _ in 1..n_steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        x = a * x + kick * z;
        out.push(x);
    }
    Ok(out)
}

/// Sign of the stored coherence in the toggling frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TogglingFrame {
    flips: Vec<f64>,
}

impl TogglingFrame {
    pub fn new(mut flips: Vec<f64>) -> Result<Self> {
        if flips.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::config("flip times must be finite and > 0"));
        }
        flips.sort_by(f64::total_cmp);
        Ok(TogglingFrame { flips })
    }

    pub fn flips(&self) -> &[f64] {
        &self.flips
    }

    /// `s(t)`: +1 before the first flip, toggling at each flip time.
    pub fn sign(&self, t: f64) -> f64 {
        let n = self.flips.partition_point(|&f| f <= t);
        if n % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Constant-sign pieces `(start, end, s)` covering `[0, total]`.
    pub fn segments(&self, total: f64) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        let mut a = 0.0;
        let mut s = 1.0;
        for &f in self.flips.iter().take_while(|&&f| f < total) {
            if f > a {
                out.push((a, f, s));
            }
            a = f;
            s = -s;
        }
        if total > a {
            out.push((a, total, s));
        }
        out
    }
}

/// Variance of the accumulated phase, `<phi(T)^2>`, for the exponential
/// noise autocorrelation `sigma^2 exp(-|t|/tau)`. Linear in the number of
/// sign changes.
pub fn phase_variance(frame: &TogglingFrame, sigma: f64, tau: f64, total: f64) -> f64 {
    if sigma == 0.0 || total <= 0.0 {
        return 0.0;
    }
    let segs = frame.segments(total);
    if tau.is_infinite() {
        let net: f64 = segs.iter().map(|&(a, b, s)| s * (b - a)).sum();
        return sigma * sigma * net * net;
    }
    let mut self_terms = 0.0;
    let mut cross = 0.0;
    // running sum of s_k (1 - e^{-L_k/tau}) e^{-(b_i - b_k)/tau}
    let mut acc = 0.0;
    for &(a, b, s) in &segs {
        let u = (b - a) / tau;
        let one_minus = -(-u).exp_m1();
        let g = if u < 1e-4 {
            // u - 1 + e^{-u}, series
            u * u / 2.0 - u * u * u / 6.0 + u.powi(4) / 24.0
        } else {
            u - one_minus
        };
        self_terms += 2.0 * g;
        cross += s * one_minus * acc;
        acc = acc * (-u).exp() + s * one_minus;
    }
    sigma * sigma * tau * tau * (self_terms + 2.0 * cross)
}

/// Coherence for Gaussian phase noise: `exp(-<phi^2>/2)`.
pub fn coherence_analytic(frame: &TogglingFrame, model: &NoiseModel, total: f64) -> f64 {
    (-0.5 * phase_variance(frame, model.sigma, model.tau_c, total)).exp()
}

/// Free-induction decay of OU noise with no pulses.
pub fn fid_analytic(model: &NoiseModel, t: f64) -> f64 {
    let frame = TogglingFrame { flips: Vec::new() };
    coherence_analytic(&frame, model, t)
}

/// Monte-Carlo coherence curve with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    pub times: Vec<f64>,
    pub coherence: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_traj: usize,
}

const CHUNK: usize = 128;

/// `C(t) = |<exp(i phi(t))>|` over `n_traj` noise trajectories, evaluated
/// at `n_points` equally spaced times in `[0, total_time]`.
pub fn coherence_decay(
    flip_times: &[f64],
    model: &NoiseModel,
    total_time: f64,
    n_traj: usize,
    n_points: usize,
) -> Result<CoherenceCurve> {
    if !(total_time > 0.0) || n_points < 2 {
        return Err(Error::config("coherence curve needs a positive span and at least two points"));
    }
    let times: Vec<f64> = (0..n_points)
        .map(|i| total_time * i as f64 / (n_points - 1) as f64)
        .collect();
    coherence_at(flip_times, model, &times, n_traj)
}

/// Monte-Carlo coherence at the given (sorted, non-negative) times.
///
/// Each trajectory draws from its own counter-derived random stream and
/// partial sums are combined in a fixed order, so results do not depend on
/// the thread count.
pub fn coherence_at(flip_times: &[f64], model: &NoiseModel, times: &[f64], n_traj: usize) -> Result<CoherenceCurve> {
    model.validate()?;
    if n_traj < 100 {
        return Err(Error::config("coherence estimate needs at least 100 trajectories"));
    }
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("evaluation times must be sorted and non-negative"));
    }
    let frame = TogglingFrame::new(flip_times.to_vec())?;
    let n_t = times.len();
    if model.sigma == 0.0 {
        return Ok(CoherenceCurve {
            times: times.to_vec(),
            coherence: vec![1.0; n_t],
            std_error: vec![0.0; n_t],
            n_traj,
        });
    }

    // merge flips and evaluation times into one step schedule
    let mut marks: Vec<(f64, Option<usize>)> = frame.flips.iter().map(|&f| (f, None)).collect();
    marks.extend(times.iter().enumerate().map(|(i, &t)| (t, Some(i))));
    marks.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.is_some().cmp(&a.1.is_some())));
    // each entry: step from the previous mark, then either record or flip
    let mut steps: Vec<(OuStep, Option<usize>)> = Vec::with_capacity(marks.len());
    let mut prev = 0.0;
    for &(t, what) in &marks {
        steps.push((OuStep::new(model.sigma, model.tau_c, t - prev), what));
        prev = t;
    }

    let n_chunks = n_traj.div_ceil(CHUNK);
    let partials: Vec<Vec<[f64; 5]>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![[0.0; 5]; n_t];
            for traj in c * CHUNK..((c + 1) * CHUNK).min(n_traj) {
                let mut rng = trajectory_rng(model.seed, traj as u64);
                let z: f64 = StandardNormal.sample(&mut rng);
                let mut x = model.sigma * z;
                let mut phi = 0.0;
                let mut s = 1.0;
                for (step, what) in &steps {
                    phi += s * step.advance(&mut x, &mut rng);
                    match what {
                        Some(i) => {
                            let (sn, cs) = phi.sin_cos();
                            let a = &mut acc[*i];
                            a[0] += cs;
                            a[1] += sn;
                            a[2] += cs * cs;
                            a[3] += sn * sn;
                            a[4] += cs * sn;
                        }
                        None => s = -s,
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = vec![[0.0; 5]; n_t];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            for k in 0..5 {
                t[k] += v[k];
            }
        }
    }
    let n = n_traj as f64;
    let mut coherence = Vec::with_capacity(n_t);
    let mut std_error = Vec::with_capacity(n_t);
    for (i, s) in total.iter().enumerate() {
        if times[i] == 0.0 {
            coherence.push(1.0);
            std_error.push(0.0);
            continue;
        }
        let (mc, ms) = (s[0] / n, s[1] / n);
        let (ecc, ess, ecs) = (s[2] / n, s[3] / n, s[4] / n);
        let c = mc.hypot(ms);
        let var = if c > 0.0 {
            let (uc, us) = (mc / c, ms / c);
            uc * uc * ecc + 2.0 * uc * us * ecs + us * us * ess - c * c
        } else {
            0.5 * (ecc + ess)
        };
        coherence.push(c);
        std_error.push((var.max(0.0) / n).sqrt());
    }
    Ok(CoherenceCurve {
        times: times.to_vec(),
        coherence,
        std_error,
        n_traj,
    })
}

/// Rephasing protocols used for decay measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Two pi pulses at a quarter and three quarters of the storage time.
    Simple,
    /// Bang-bang train with 4 ms spacing.
    Ddc,
}

impl Protocol {
    /// Bang-bang pulse count for a requested storage time `t`: the nearest
    /// count, raised to the next even number when odd.
    pub fn ddc_count(t: f64) -> usize {
        let n = (t / DDC_SPACING).round().max(2.0) as usize;
        n + n % 2
    }

    /// Storage time actually realised for a requested `t`.
    pub fn storage_time(self, t: f64) -> f64 {
        match self {
            Protocol::Simple => t,
            Protocol::Ddc => DDC_SPACING * Self::ddc_count(t) as f64,
        }
    }

    /// Flip times relative to the storage origin.
    pub fn flip_times(self, t: f64) -> Vec<f64> {
        match self {
            Protocol::Simple => vec![0.25 * t, 0.75 * t],
            Protocol::Ddc => (0..Self::ddc_count(t))
                .map(|k| 0.5 * DDC_SPACING + DDC_SPACING * k as f64)
                .collect(),
        }
    }
}

/// Noise envelope on the stored coherence at the recall time of `sequence`.
pub fn decay_envelope(sequence: &Sequence, model: &NoiseModel, n_traj: usize) -> Result<f64> {
    model.validate()?;
    let (flips, total) = storage_flips(sequence)?;
    if model.sigma == 0.0 || total == 0.0 {
        return Ok(1.0);
    }
    let curve = coherence_at(&flips, model, &[total], n_traj)?;
    Ok(curve.coherence[0])
}

/// Exact Gaussian-phase counterpart of [`decay_envelope`].
pub fn decay_envelope_analytic(sequence: &Sequence, model: &NoiseModel) -> Result<f64> {
    model.validate()?;
    let (flips, total) = storage_flips(sequence)?;
    Ok(coherence_analytic(&TogglingFrame::new(flips)?, model, total))
}

fn storage_flips(sequence: &Sequence) -> Result<(Vec<f64>, f64)> {
    let origin = sequence.storage_start();
    let recall = sequence
        .recall_time()
        .ok_or_else(|| Error::config("sequence has no recall event"))?;
    let flips: Vec<f64> = sequence
        .rf_times()
        .into_iter()
        .filter(|&t| t > origin && t < recall)
        .map(|t| t - origin)
        .collect();
    Ok((flips, (recall - origin).max(0.0)))
}

/// Decay constants that a calibration should reproduce (energy decay, s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub t2_simple: f64,
    pub t2_ddc: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            t2_simple: 0.35,
            t2_ddc: 2.3,
        }
    }
}

/// Default storage-time grid of a decay scan (s).
pub const DEFAULT_DECAY_TIMES: [f64; 7] = [0.1, 0.2, 0.4, 0.7, 1.0, 1.5, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub storage_times: Vec<f64>,
    pub sigma_range: (f64, f64),
    pub tau_range: (f64, f64),
    pub grid_points: usize,
    /// Accepted relative error on each decay constant.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            storage_times: DEFAULT_DECAY_TIMES.to_vec(),
            sigma_range: (1e-1, 1e4),
            tau_range: (1e-4, 1e2),
            grid_points: 41,
            tolerance: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub model: NoiseModel,
    pub targets: CalibrationTargets,
    pub t2_simple: f64,
    pub t2_ddc: f64,
    pub rel_error_simple: f64,
    pub rel_error_ddc: f64,
    /// Sum of squared log errors at the optimum.
    pub objective: f64,
    pub success: bool,
    pub grid_best: (f64, f64),
    pub grid_objective: f64,
    pub evaluations: usize,
    pub refinement_steps: usize,
}

impl CalibrationReport {
    /// The calibrated model, or a calibration error if the targets were
    /// not met.
    pub fn model(&self) -> Result<NoiseModel> {
        if self.success {
            Ok(self.model)
        } else {
            Err(Error::Calibration(format!(
                "best model sigma = {:.4e} rad/s, tau_c = {:.4e} s gives T2 = {:.4} s / {:.4} s against targets {:.4} s / {:.4} s",
                self.model.sigma, self.model.tau_c, self.t2_simple, self.t2_ddc, self.targets.t2_simple, self.targets.t2_ddc
            )))
        }
    }
}

/// Fitted energy-decay constant of `protocol` under Gaussian phase noise.
pub fn fitted_t2(protocol: Protocol, sigma: f64, tau: f64, storage_times: &[f64]) -> Option<f64> {
    let mut times = Vec::with_capacity(storage_times.len());
    let mut energies = Vec::with_capacity(storage_times.len());
    for &t in storage_times {
        let t_act = protocol.storage_time(t);
        let frame = TogglingFrame::new(protocol.flip_times(t)).ok()?;
        let c2 = (-phase_variance(&frame, sigma, tau, t_act)).exp();
        times.push(t_act);
        energies.push(c2);
    }
    let fit = fit_exponential(&DecayCurve::new(times, energies)).ok()?;
    (fit.converged && fit.tau > 0.0).then_some(fit.tau)
}

/// Search `(sigma, tau_c)` so the fitted energy-decay constants of the
/// simple and bang-bang protocols match the targets.
pub fn calibrate(targets: &CalibrationTargets, opts: &CalibrationOptions) -> Result<CalibrationReport> {
    if !(targets.t2_simple > 0.0) || !(targets.t2_ddc > targets.t2_simple) {
        return Err(Error::config("calibration targets need 0 < T2_simple < T2_ddc"));
    }
    if opts.grid_points < 2 || opts.storage_times.len() < 3 {
        return Err(Error::config("calibration needs a grid of >= 2 points per axis and >= 3 storage times"));
    }
    let (ls0, ls1) = (opts.sigma_range.0.log10(), opts.sigma_range.1.log10());
    let (lt0, lt1) = (opts.tau_range.0.log10(), opts.tau_range.1.log10());
    let mut evaluations = 0usize;
    let mut objective = |ls: f64, lt: f64| -> (f64, f64, f64) {
        evaluations += 1;
        let (s, t) = (10f64.powf(ls), 10f64.powf(lt));
        let a = fitted_t2(Protocol::Simple, s, t, &opts.storage_times);
        let b = fitted_t2(Protocol::Ddc, s, t, &opts.storage_times);
        match (a, b) {
            (Some(a), Some(b)) => {
                let e = (a / targets.t2_simple).ln().powi(2) + (b / targets.t2_ddc).ln().powi(2);
                (e, a, b)
            }
            _ => (f64::INFINITY, f64::NAN, f64::NAN),
        }
    };

    let n = opts.grid_points;
    let mut best = (f64::INFINITY, ls0, lt0);
    for i in 0..n {
        let ls = ls0 + (ls1 - ls0) * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let lt = lt0 + (lt1 - lt0) * j as f64 / (n - 1) as f64;
            let (e, _, _) = objective(ls, lt);
            if e < best.0 {
                best = (e, ls, lt);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Calibration("no grid point produced a fittable decay".into()));
    }
    let grid_best = (10f64.powf(best.1), 10f64.powf(best.2));
    let grid_objective = best.0;

    // coordinate descent in log space
    let mut step = [(ls1 - ls0) / (n - 1) as f64, (lt1 - lt0) / (n - 1) as f64];
    let (mut e, mut ls, mut lt) = best;
    let mut refinement_steps = 0;
    while step[0].max(step[1]) > 1e-7 && refinement_steps < 2000 {
        refinement_steps += 1;
        let mut improved = false;
        for axis in 0..2 {
            for dir in [1.0, -1.0] {
                let (cs, ct) = if axis == 0 {
                    ((ls + dir * step[0]).clamp(ls0, ls1), lt)
                } else {
                    (ls, (lt + dir * step[1]).clamp(lt0, lt1))
                };
                let (ce, _, _) = objective(cs, ct);
                if ce < e {
                    e = ce;
                    ls = cs;
                    lt = ct;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step[0] *= 0.5;
            step[1] *= 0.5;
        }
    }
    let (e, a, b) = objective(ls, lt);
    let rel_a = a / targets.t2_simple - 1.0;
    let rel_b = b / targets.t2_ddc - 1.0;
    let success = rel_a.abs() <= opts.tolerance && rel_b.abs() <= opts.tolerance;
    Ok(CalibrationReport {
        model: NoiseModel {
            sigma: 10f64.powf(ls),
            tau_c: 10f64.powf(lt),
            seed: opts.seed,
        },
        targets: *targets,
        t2_simple: a,
        t2_ddc: b,
        rel_error_simple: rel_a,
        rel_error_ddc: rel_b,
        objective: e,
        success,
        grid_best,
        grid_objective,
        evaluations,
        refinement_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(sigma: f64, tau: f64) -> NoiseModel {
        NoiseModel::new(sigma, tau, 7).unwrap()
    }

    #[test]
    fn zero_noise_is_silent() {
        let m = model(0.0, 1e-3);
        assert!(sample_ou(&m, 1e-5, 100).unwrap().iter().all(|&x| x == 0.0));
        let c = coherence_decay(&[0.01], &m, 0.1, 100, 11).unwrap();
        assert!(c.coherence.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn ou_guard() {
        let m = model(1.0, 1e-3);
        assert!(matches!(sample_ou(&m, 2e-4, 10), Err(Error::Config(_))));
        assert!(sample_ou(&m, 1e-4, 10).is_ok());
    }

    #[test]
    fn ou_variance_and_correlation() {
        // stationary variance and lag-tau autocovariance of a 1e6 sample
        let tau = 1e-3;
        let dt = tau / 10.0;
        let m = model(3.0, tau);
        let x = sample_ou(&m, dt, 1_000_000).unwrap();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((var / 9.0 - 1.0).abs() < 0.03, "var = {var}");
        let lag = 10;
        let cov = x
            .iter()
            .zip(&x[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / (n - lag as f64);
        let r = cov / 9.0;
        assert!((r / (-1f64).exp() - 1.0).abs() < 0.05, "r = {r}");
    }

    #[test]
    fn reproducible() {
        let m = model(50.0, 2e-3);
        let a = coherence_decay(&[0.01, 0.03], &m, 0.05, 500, 6).unwrap();
        let b = coherence_decay(&[0.01, 0.03], &m, 0.05, 500, 6).unwrap();
        assert_eq!(a, b);
        assert_eq!(sample_ou(&m, 1e-4, 50).unwrap(), sample_ou(&m, 1e-4, 50).unwrap());
    }

    #[test]
    fn fid_matches_closed_form() {
        let m = model(40.0, 5e-3);
        let curve = coherence_decay(&[], &m, 0.1, 10_000, 11).unwrap();
        for (t, c) in curve.times.iter().zip(&curve.coherence) {
            let x = t / m.tau_c;
            let expect = (-m.sigma.powi(2) * m.tau_c.powi(2) * (x - 1.0 + (-x).exp())).exp();
            assert!((fid_analytic(&m, *t) - expect).abs() < 1e-12);
            if expect > 0.2 {
                assert!((c / expect - 1.0).abs() < 0.02, "t={t} c={c} expect={expect}");
            }
        }
    }

    #[test]
    fn monte_carlo_matches_gaussian_formula_with_flips() {
        let m = model(30.0, 4e-3);
        let flips = Protocol::Ddc.flip_times(0.1);
        let frame = TogglingFrame::new(flips.clone()).unwrap();
        let times = [0.02, 0.05, 0.1];
        let c = coherence_at(&flips, &m, &times, 10_000).unwrap();
        for (i, &t) in times.iter().enumerate() {
            let expect = coherence_analytic(&frame, &m, t);
            assert!((c.coherence[i] - expect).abs() < 4.0 * c.std_error[i] + 1e-3);
        }
    }

    #[test]
    fn static_noise_is_echoed() {
        let m = model(200.0, f64::INFINITY);
        let c = coherence_at(&[0.01], &m, &[0.02], 1000).unwrap();
        assert!((c.coherence[0] - 1.0).abs() < 1e-12);
        let fid = coherence_at(&[], &m, &[0.02], 1000).unwrap();
        assert!(fid.coherence[0] < 0.5);
    }

    #[test]
    fn coherence_bounded_and_starts_at_one() {
        let m = model(80.0, 1e-2);
        let c = coherence_decay(&[0.05, 0.15], &m, 0.2, 400, 21).unwrap();
        assert_eq!(c.coherence[0], 1.0);
        for (v, se) in c.coherence.iter().zip(&c.std_error) {
            assert!(*v >= 0.0 && *v <= 1.0 + 3.0 * se);
        }
    }

    #[test]
    fn toggling_frame() {
        let f = TogglingFrame::new(vec![0.3, 0.1]).unwrap();
        assert_eq!(f.sign(0.0), 1.0);
        assert_eq!(f.sign(0.2), -1.0);
        assert_eq!(f.sign(0.5), 1.0);
        assert_eq!(f.segments(0.4), vec![(0.0, 0.1, 1.0), (0.1, 0.3, -1.0), (0.3, 0.4, 1.0)]);
        assert!(TogglingFrame::new(vec![0.0]).is_err());
    }

    #[test]
    fn phase_variance_matches_direct_quadrature() {
        let (sigma, tau) = (2.0, 0.03);
        let frame = TogglingFrame::new(vec![0.01, 0.045, 0.07]).unwrap();
        let total = 0.1;
        let n = 2000;
        let h = total / n as f64;
        let mut q = 0.0;
        for i in 0..n {
            let ti = (i as f64 + 0.5) * h;
            for j in 0..n {
                let tj = (j as f64 + 0.5) * h;
                q += frame.sign(ti) * frame.sign(tj) * (-(ti - tj).abs() / tau).exp();
            }
        }
        q *= sigma * sigma * h * h;
        let v = phase_variance(&frame, sigma, tau, total);
        assert!((v / q - 1.0).abs() < 1e-3, "{v} vs {q}");
    }

    #[test]
    fn ou_step_series_branch_is_continuous() {
        let below = OuStep::new(1.0, 1.0, 0.1 - 1e-12);
        let above = OuStep::new(1.0, 1.0, 0.1 + 1e-12);
        assert!((below.sd_int / above.sd_int - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ddc_refocuses_better_than_simple() {
        let m = model(30.0, 4e-3);
        for t in [0.1, 0.4, 1.0, 2.0] {
            let s = coherence_analytic(&TogglingFrame::new(Protocol::Simple.flip_times(t)).unwrap(), &m, t);
            let d = coherence_analytic(
                &TogglingFrame::new(Protocol::Ddc.flip_times(t)).unwrap(),
                &m,
                Protocol::Ddc.storage_time(t),
            );
            assert!(d >= s);
        }
    }

    #[test]
    fn protocol_layout() {
        assert_eq!(Protocol::ddc_count(0.1), 26);
        assert_eq!(Protocol::ddc_count(1.0), 250);
        assert_eq!(Protocol::ddc_count(0.7), 176);
        assert_eq!(Protocol::Ddc.flip_times(0.008), vec![0.002, 0.006]);
        assert_eq!(Protocol::Simple.flip_times(0.1), vec![0.025, 0.75 * 0.1]);
    }
}
