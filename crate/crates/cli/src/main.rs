use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slowlight::decoherence::Protocol;
use slowlight::io::{write_csv, write_json, write_record_csv, Config};
use slowlight::propagation::GeometryMode;
use slowlight::scenarios;
use slowlight::sequence::Sequence;
use slowlight::{Error, Result};

/// Stopped-light simulator for an inhomogeneously broadened lambda medium.
#[derive(Debug, Parser)]
#[command(name = "slowlight", version)]
struct Cli {
    /// TOML configuration; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Seed for the noise trajectories.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Beam geometry: co or counter.
    #[arg(long, global = true)]
    geometry: Option<GeometryMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Probe transmission sweep across the line.
    Sweep {
        /// Coupling Rabi frequency (Hz); defaults to the sweep coupling.
        #[arg(long, conflicts_with = "coupling_off")]
        coupling_hz: Option<f64>,
        /// Sweep with the coupling beam off.
        #[arg(long)]
        coupling_off: bool,
    },
    /// Single store-and-recall run.
    Store {
        /// Event timeline (JSON) to run instead of the configured protocol.
        #[arg(long)]
        sequence: Option<PathBuf>,
        /// Storage time (s).
        #[arg(long)]
        storage_time: Option<f64>,
        /// Rephasing protocol: simple or ddc.
        #[arg(long, value_parser = parse_protocol)]
        protocol: Option<Protocol>,
    },
    /// Recalled energy against storage time for both protocols.
    Decay,
    /// Recalled against input energy over a range of write-pulse areas.
    Linearity,
    /// Fit the spin-noise model to the target decay constants.
    Calibrate,
}

fn parse_protocol(s: &str) -> std::result::Result<Protocol, String> {
    match s.to_ascii_lowercase().as_str() {
        "simple" => Ok(Protocol::Simple),
        "ddc" => Ok(Protocol::Ddc),
        _ => Err(format!("unknown protocol '{s}' (expected simple or ddc)")),
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(g) = cli.geometry {
        cfg.geometry = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn outputs(dir: &Path, name: &str) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    Ok((dir.join(format!("{name}.csv")), dir.join(format!("{name}.summary.json"))))
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Sweep {
            coupling_hz,
            coupling_off,
        } => {
            let coupling = if *coupling_off {
                0.0
            } else {
                coupling_hz.unwrap_or_else(|| cfg.sweep_coupling_hz())
            };
            let out = scenarios::run_sweep(&cfg, coupling)?;
            let (csv, json) = outputs(&cli.out, "sweep")?;
            write_csv(&csv, &scenarios::SweepOutcome::HEADER, &out.rows())?;
            write_json(&json, &out.summary)?;
            let s = &out.summary;
            match s.eit_fwhm_hz {
                Some(w) => println!("resonant transmission {:.5}, transparency width {:.1} Hz", s.resonant_transmission, w),
                None => println!("resonant transmission {:.5}", s.resonant_transmission),
            }
        }
        Command::Store {
            sequence,
            storage_time,
            protocol,
        } => {
            if let Some(t) = storage_time {
                cfg.storage_time_s = *t;
            }
            if let Some(p) = protocol {
                cfg.protocol = *p;
            }
            cfg.validate()?;
            let seq = match sequence {
                Some(p) => Sequence::load(p)?,
                None => cfg.store_sequence()?,
            };
            let out = scenarios::run_store(&cfg, &seq)?;
            let (csv, json) = outputs(&cli.out, "store")?;
            write_record_csv(&csv, &out.record)?;
            write_json(&json, &out.summary)?;
            println!(
                "efficiency {:.4e} after {:.4} s with {} rf pulses",
                out.summary.efficiency, out.summary.storage_time_s, out.summary.rf_pulses
            );
        }
        Command::Decay => {
            let (model, calibration) = scenarios::noise_model_or_calibrate(&cfg)?;
            let summary = scenarios::run_decay(&cfg, &model, calibration)?;
            let (csv, json) = outputs(&cli.out, "decay")?;
            write_csv(&csv, &scenarios::DecaySummary::HEADER, &summary.rows())?;
            write_json(&json, &summary)?;
            if !(summary.fit_simple.converged && summary.fit_ddc.converged) {
                return Err(Error::analysis("decay fit did not converge"));
            }
            println!(
                "decay constants: simple {:.4} s, ddc {:.4} s (ratio {:.2})",
                summary.fit_simple.tau, summary.fit_ddc.tau, summary.tau_ratio
            );
        }
        Command::Linearity => {
            let summary = scenarios::run_linearity(&cfg)?;
            let (csv, json) = outputs(&cli.out, "linearity")?;
            write_csv(&csv, &scenarios::LinearitySummary::HEADER, &summary.rows())?;
            write_json(&json, &summary)?;
            let r = &summary.report;
            match r.saturation_area {
                Some(a) => println!("low-area R^2 {:.6}, saturation from {a} pi", r.r_squared),
                None => println!("low-area R^2 {:.6}, no saturation in range", r.r_squared),
            }
        }
        Command::Calibrate => {
            let report = scenarios::run_calibration(&cfg)?;
            let (csv, json) = outputs(&cli.out, "calibrate")?;
            write_csv(&csv, &scenarios::CALIBRATION_HEADER, &scenarios::calibration_table(&cfg, &report.model)?)?;
            write_json(&json, &report)?;
            let model = report.model()?;
            println!(
                "sigma {:.6e} rad/s, tau_c {:.6e} s: decay constants {:.4} s / {:.4} s",
                model.sigma, model.tau_c, report.t2_simple, report.t2_ddc
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
