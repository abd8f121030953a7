//! Command-line front end for the ion-mirror simulator.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
//! (lock loss, fit failure, I/O error during a run).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ion_mirror::config::Config;
use ion_mirror::dynamics;
use ion_mirror::error::Error;
use ion_mirror::io;
use ion_mirror::model::Predictions;
use ion_mirror::protocol::{self, ExperimentPlan, PlanKind};
use ion_mirror::servo::{self, Slope};
use ion_mirror::spectral::{self, WindowKind};

#[derive(Parser)]
#[command(
    name = "ionmirror",
    about = "Simulated single-ion / distant-mirror measurement bench",
    version
)]
struct Cli {
    /// TOML configuration file; omitted means built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master random seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Output directory for data products.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Output format for result summaries.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Print the closed-form model predictions for the configured system.
    Predict,
    /// One locked run: trajectory, binned counts, and servo telemetry.
    Simulate {
        /// Recorded duration, s.
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// Trajectory decimation stride (steps per sample).
        #[arg(long, default_value_t = 256)]
        stride: usize,
        /// Counts CSV bin width, s.
        #[arg(long, default_value_t = 1e-3)]
        counts_bin: f64,
    },
    /// PSD and Lorentzian sideband fit of a counts CSV (bin_start_s,counts).
    Spectrum {
        /// Input counts file.
        input: PathBuf,
        /// Fit window center, Hz; defaults to the configured trap frequency.
        #[arg(long)]
        center: Option<f64>,
        /// Fit window half-width, Hz.
        #[arg(long, default_value_t = 2500.0)]
        half_width: f64,
        /// Welch segment length, bins.
        #[arg(long, default_value_t = 1 << 14)]
        segment: usize,
    },
    /// Servo-only stress test against the configured drift.
    Lock {
        /// Duration, s.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        /// Lock slope.
        #[arg(long, value_enum, default_value_t = SlopeArg::Positive)]
        slope: SlopeArg,
    },
    /// Full measurement protocols on the simulated apparatus.
    Experiment {
        #[command(subcommand)]
        protocol: Protocol,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SlopeArg {
    Positive,
    Negative,
}

#[derive(Subcommand)]
enum Protocol {
    /// Alternating-slope trap-frequency shift measurement.
    Alternating,
    /// Shift vs excitation (mean count rate) scan.
    PeScan,
    /// Shift vs mirror displacement scan with reference curves.
    SpatialScan,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::ConfigParse(_)
        | Error::InvalidParameter { .. }
        | Error::Io(_) => 1,
        _ => 2,
    }
}

fn load_config(cli: &Cli) -> Result<Config, Error> {
    match &cli.config {
        Some(path) => Config::load(path),
        None => Ok(Config::default()),
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    let sys = cfg.system()?;
    let params = cfg.sim_params(&sys, cli.seed)?;
    let predictions = Predictions::for_system(&sys);

    match &cli.command {
        Command::Predict => {
            if cli.format == Format::Json {
                print!("{}", io::to_json(&predictions)?);
            } else {
                print_predictions(&predictions);
            }
            Ok(())
        }
        Command::Simulate {
            duration,
            stride,
            counts_bin,
        } => {
            let mut p = params;
            p.duration = *duration;
            p.warmup = 5.0 * cfg.servo.integration_time_s;
            p.record_stride = *stride;
            let servo_cfg = cfg.servo_config(&sys, &p);
            let drift = cfg.drift_model();
            let out = dynamics::simulate_run(&sys, &p, Some((&servo_cfg, &drift)))?;

            write_manifest(cli, &cfg, &predictions, p.warmup + p.duration)?;
            io::write_atomic(
                &cli.out_dir.join("trajectory.csv"),
                &io::trajectory_csv(&out.trajectory),
            )?;
            io::write_atomic(
                &cli.out_dir.join("counts.csv"),
                &io::counts_csv(
                    &dynamics::bin_counts(&out.photons.event_times, *counts_bin, p.duration),
                    *counts_bin,
                ),
            )?;
            io::write_atomic(
                &cli.out_dir.join("telemetry.csv"),
                &io::telemetry_csv(&out.telemetry),
            )?;
            eprintln!(
                "run complete: {} events, mean rate {:.1} counts/s, lock {}",
                out.stats.n_events,
                out.stats.mean_rate,
                if out.lost_lock { "LOST" } else { "held" }
            );
            if out.lost_lock {
                return Err(Error::LockLost {
                    duration: *duration,
                });
            }
            Ok(())
        }
        Command::Spectrum {
            input,
            center,
            half_width,
            segment,
        } => {
            let (counts, bin_width) = read_counts_csv(input)?;
            let spectrum = spectral::estimate_psd(
                &counts,
                bin_width,
                *segment,
                0.5,
                WindowKind::Hann,
            )?;
            let f_center =
                center.unwrap_or_else(|| sys.trap.omega_trap() / core::f64::consts::TAU);
            let fit =
                spectral::fit_lorentzian(&spectrum, (f_center - half_width, f_center + half_width))?;
            let snr = spectral::snr_db(&fit).unwrap_or(f64::NEG_INFINITY);

            write_manifest(cli, &cfg, &predictions, counts.len() as f64 * bin_width)?;
            io::write_atomic(
                &cli.out_dir.join("spectrum.csv"),
                &io::spectrum_csv(&spectrum),
            )?;
            let fit_doc = serde_json::json!({
                "f0_hz": fit.f0,
                "fwhm_hz": fit.fwhm,
                "amplitude": fit.amplitude,
                "floor": fit.floor,
                "f0_sigma_hz": fit.f0_uncertainty,
                "snr_db": snr,
                "converged": fit.converged,
            });
            let text = format!("{}\n", serde_json::to_string_pretty(&fit_doc)?);
            io::write_atomic(&cli.out_dir.join("fit.json"), &text)?;
            print!("{text}");
            Ok(())
        }
        Command::Lock { duration, slope } => {
            let servo_cfg = cfg.servo_config(&sys, &params).select_slope(match slope {
                SlopeArg::Positive => Slope::Positive,
                SlopeArg::Negative => Slope::Negative,
            });
            let drift = cfg.drift_model();
            let plant = servo::FringePlant {
                r0: dynamics::mean_count_rate(&sys, &params),
                contrast: params.detection_contrast * params.smear_factor(&sys),
                two_k: 2.0 * sys.ion.wavenumber(),
            };
            let z_lock = sys.slope_midpoint(*slope == SlopeArg::Positive);
            let mut rng = seeded_rng(cli.seed);
            let run =
                servo::run_lock_sim(&plant, &servo_cfg, &drift, z_lock, *duration, &mut rng)?;
            let rms_nm =
                servo::lock_quality(&run.z_residual, run.sample_dt, servo_cfg.integration_time)?;

            write_manifest(cli, &cfg, &predictions, *duration)?;
            io::write_atomic(
                &cli.out_dir.join("telemetry.csv"),
                &io::telemetry_csv(&run.telemetry),
            )?;
            eprintln!(
                "lock {}: residual rms {:.2} nm over {duration} s",
                if run.lost_lock { "LOST" } else { "held" },
                rms_nm
            );
            if run.lost_lock {
                return Err(Error::LockLost {
                    duration: *duration,
                });
            }
            Ok(())
        }
        Command::Experiment { protocol } => run_experiment(cli, &cfg, protocol),
    }
}

fn base_plan(cfg: &Config, kind: PlanKind, seed: u64) -> Result<ExperimentPlan, Error> {
    let sys = cfg.system()?;
    let params = cfg.sim_params(&sys, seed)?;
    let servo_cfg = cfg.servo_config(&sys, &params);
    let mut plan = ExperimentPlan::new(kind, sys, params, servo_cfg, cfg.drift_model());
    plan.n_spectra = cfg.experiment.n_spectra;
    plan.spectrum_duration = cfg.experiment.spectrum_duration_s;
    plan.master_seed = seed;
    plan.frequency_drift_hz_per_record = cfg.experiment.frequency_drift_hz_per_record;
    Ok(plan)
}

fn run_experiment(cli: &Cli, cfg: &Config, protocol: &Protocol) -> Result<(), Error> {
    let sys = cfg.system()?;
    let predictions = Predictions::for_system(&sys);
    match protocol {
        Protocol::Alternating => {
            let plan = base_plan(cfg, PlanKind::AlternatingSlope, cli.seed)?;
            let total = plan.n_spectra as f64 * (plan.settle_time + plan.spectrum_duration);
            let (records, estimate) = protocol::run_alternating_slope(&plan)?;
            write_manifest(cli, cfg, &predictions, total)?;
            io::write_atomic(&cli.out_dir.join("records.csv"), &io::records_csv(&records))?;
            io::write_atomic(
                &cli.out_dir.join("shift.json"),
                &io::to_json(&estimate)?,
            )?;
            if cli.format == Format::Json {
                print!("{}", io::to_json(&estimate)?);
            } else {
                println!(
                    "shift_hz,{:.6}\nuncertainty_hz,{:.6}\nn_pairs,{}",
                    estimate.shift_hz, estimate.uncertainty_hz, estimate.n_pairs
                );
            }
            Ok(())
        }
        Protocol::PeScan => {
            let mut plan = base_plan(cfg, PlanKind::PeScan, cli.seed)?;
            plan.scan_points = cfg.experiment.pe_scan_points.clone();
            let per_point = plan.n_spectra as f64 * (plan.settle_time + plan.spectrum_duration);
            let scan = protocol::run_pe_scan(&plan)?;
            write_manifest(
                cli,
                cfg,
                &predictions,
                per_point * plan.scan_points.len() as f64,
            )?;
            io::write_atomic(&cli.out_dir.join("scan.csv"), &io::scan_csv(&scan))?;
            io::write_atomic(&cli.out_dir.join("scan_fit.json"), &io::to_json(&scan.fit)?)?;
            if cli.format == Format::Json {
                print!("{}", io::to_json(&scan.fit)?);
            }
            Ok(())
        }
        Protocol::SpatialScan => {
            let mut plan = base_plan(cfg, PlanKind::SpatialScan, cli.seed)?;
            plan.scan_points = cfg.experiment.spatial_scan_points.clone();
            let per_point = plan.n_spectra as f64 * (plan.settle_time + plan.spectrum_duration);
            let scan = protocol::run_spatial_scan(&plan)?;
            write_manifest(
                cli,
                cfg,
                &predictions,
                per_point * plan.scan_points.len() as f64,
            )?;
            io::write_atomic(&cli.out_dir.join("scan.csv"), &io::scan_csv(&scan))?;
            io::write_atomic(&cli.out_dir.join("scan_fit.json"), &io::to_json(&scan.fit)?)?;
            io::write_atomic(
                &cli.out_dir.join("reference_curves.csv"),
                &io::reference_csv(&protocol::reference_curves(&sys, 201)),
            )?;
            if cli.format == Format::Json {
                print!("{}", io::to_json(&scan.fit)?);
            }
            Ok(())
        }
    }
}

fn write_manifest(
    cli: &Cli,
    cfg: &Config,
    predictions: &Predictions,
    simulated_s: f64,
) -> Result<(), Error> {
    let text = io::manifest_json(cfg, cli.seed, predictions, simulated_s)?;
    io::write_atomic(&cli.out_dir.join("manifest.json"), &text)
}

fn print_predictions(p: &Predictions) {
    println!("quantity,value,unit");
    println!("potential_amplitude,{:.4e},J", p.potential_amplitude_j);
    println!("level_shift,{:.4e},Hz", p.level_shift_hz);
    println!("max_force,{:.4e},N", p.max_force_n);
    println!("vacuum_frequency,{:.4e},Hz", p.vacuum_frequency_hz);
    println!("shift_amplitude,{:.4e},Hz", p.shift_amplitude_hz);
    println!("shift_peak_to_peak,{:.4e},Hz", p.shift_peak_to_peak_hz);
    println!("recoil_frequency,{:.4e},Hz", p.recoil_frequency_hz);
    println!("max_acceleration,{:.4e},m/s^2", p.max_acceleration_mps2);
    println!("max_acceleration,{:.4e},g", p.max_acceleration_g);
    println!("trap_frequency,{:.4e},Hz", p.trap_frequency_hz);
    println!("fringe_period,{:.4e},m", p.fringe_period_m);
    for w in &p.warnings {
        println!("warning,{w:?},");
    }
}

fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Parse a counts CSV (bin_start_s,counts) back into (counts, bin_width).
fn read_counts_csv(path: &Path) -> Result<(Vec<f64>, f64), Error> {
    let text = std::fs::read_to_string(path)?;
    let mut times = Vec::new();
    let mut counts = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 && line.starts_with("bin_start_s") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let t: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::ConfigParse(format!("{}:{}: bad bin_start_s", path.display(), ln + 1)))?;
        let c: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::ConfigParse(format!("{}:{}: bad counts", path.display(), ln + 1)))?;
        times.push(t);
        counts.push(c);
    }
    if counts.len() < 2 {
        return Err(Error::TooShort {
            need: 2,
            got: counts.len(),
        });
    }
    let bin_width = times[1] - times[0];
    if !(bin_width > 0.0) {
        return Err(Error::ConfigParse(format!(
            "{}: bin_start_s not increasing",
            path.display()
        )));
    }
    Ok((counts, bin_width))
}
