use slowlight::io::Config;
use slowlight::scenarios::{run_store, simulate};
use slowlight::sequence::{make_store_recall_bare, Event, Sequence};

fn small() -> Config {
    Config {
        n_opt: 41,
        n_spin: 21,
        n_z: 8,
        ..Default::default()
    }
}

fn bare(cfg: &Config, t: f64) -> Sequence {
    make_store_recall_bare(t, &cfg.store_options()).unwrap()
}

fn efficiency(cfg: &Config, seq: &Sequence) -> f64 {
    run_store(cfg, seq).unwrap().summary.efficiency
}

fn shifted(seq: &Sequence, dt: f64) -> Sequence {
    let events = seq
        .events
        .iter()
        .map(|e| match *e {
            Event::ProbePulse {
                t0,
                duration,
                amplitude,
                shape,
                detuning_hz,
            } => Event::ProbePulse {
                t0: t0 + dt,
                duration,
                amplitude,
                shape,
                detuning_hz,
            },
            Event::CouplingSet { t, rabi_hz, ramp } => Event::CouplingSet { t: t + dt, rabi_hz, ramp },
            Event::RfPulseAt { t, pulse } => Event::RfPulseAt { t: t + dt, pulse },
            Event::RecallAt { t, window } => Event::RecallAt { t: t + dt, window },
            Event::ProbeSweep {
                t0,
                duration,
                span_hz,
                rabi_hz,
            } => Event::ProbeSweep {
                t0: t0 + dt,
                duration,
                span_hz,
                rabi_hz,
            },
        })
        .collect();
    Sequence::new(events, seq.total_duration + dt)
}

#[test]
fn efficiency_falls_with_dead_time() {
    let cfg = small();
    let effs: Vec<f64> = [0.0, 10e-6, 30e-6, 60e-6, 120e-6]
        .iter()
        .map(|&t| efficiency(&cfg, &bare(&cfg, t)))
        .collect();
    assert!(effs[0] > 0.0);
    assert!(effs.windows(2).all(|w| w[1] <= w[0]), "{effs:?}");
    assert!(effs[4] < 0.1 * effs[0], "{effs:?}");
}

#[test]
fn efficiency_falls_with_spin_spread() {
    let effs: Vec<f64> = [2e3, 5e3, 10e3, 20e3]
        .iter()
        .map(|&w| {
            let cfg = Config {
                spin_fwhm_hz: w,
                ..small()
            };
            efficiency(&cfg, &bare(&cfg, 40e-6))
        })
        .collect();
    assert!(effs.windows(2).all(|w| w[1] <= w[0]), "{effs:?}");
}

#[test]
fn efficiency_is_invariant_under_time_shift() {
    let cfg = Config {
        storage_time_s: 0.01,
        ..small()
    };
    let seq = cfg.store_sequence().unwrap();
    let base = efficiency(&cfg, &seq);
    for dt in [-3e-3, 1e-4, 0.5] {
        let moved = efficiency(&cfg, &shifted(&seq, dt));
        assert!((moved / base - 1.0).abs() < 1e-6, "shift {dt}: {moved} vs {base}");
    }
}

#[test]
fn output_is_causal() {
    let cfg = small();
    let seq = bare(&cfg, 50e-6);
    let recall = seq.recall_time().unwrap();
    let weak = Config {
        recall_rabi_hz: Some(20e3),
        ..cfg.clone()
    };
    let a = simulate(&cfg, &seq).unwrap();
    let b = simulate(&weak, &bare(&weak, 50e-6)).unwrap();
    let (w0, _) = a.write_window.unwrap();
    let mut compared = 0;
    for (i, t) in a.time.iter().enumerate() {
        if *t < w0 {
            assert_eq!(a.output[i].norm(), 0.0);
        }
        if *t < recall {
            assert_eq!(a.time[i], b.time[i]);
            assert_eq!(a.output[i], b.output[i]);
            compared += 1;
        }
    }
    assert!(compared > 100);
    let after = |r: &slowlight::propagation::SimulationRecord| {
        r.time
            .iter()
            .zip(&r.output)
            .filter(|(t, _)| **t >= recall)
            .map(|(_, o)| o.norm_sqr())
            .sum::<f64>()
    };
    assert!(after(&a) != after(&b));
}

#[test]
fn noise_model_only_lowers_efficiency() {
    let cfg = Config {
        storage_time_s: 0.1,
        ..small()
    };
    let seq = cfg.store_sequence().unwrap();
    let clean = efficiency(&cfg, &seq);
    let noisy_cfg = Config {
        noise_sigma_rad_s: Some(23.1),
        noise_tau_c_s: Some(2.677e-3),
        n_traj: 2000,
        ..cfg.clone()
    };
    let out = run_store(&noisy_cfg, &seq).unwrap();
    let env = out.summary.diagnostics.noise_envelope;
    assert!(env > 0.0 && env < 1.0);
    assert!((out.summary.efficiency / (clean * env * env) - 1.0).abs() < 1e-6);
}
