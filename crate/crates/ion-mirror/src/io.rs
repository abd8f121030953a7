//! Data products: plot-ready CSV files and the JSON run manifest.
//!
//! Every writer goes through a temp-file-and-rename so a failed run never
//! leaves a truncated file behind. All timestamps are simulated wall-clock
//! seconds, so reruns with the same seed are byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::config::Config;
use crate::error::Result;
use crate::model::Predictions;
use crate::protocol::{MeasurementRecord, ReferencePoint, ScanResult};
use crate::servo::TelemetrySample;

/// Atomic write: the target appears complete or not at all.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.10e}")
    }
}

/// records CSV: index, slope, f0_hz, fwhm_hz, snr_db, excluded
pub fn records_csv(records: &[MeasurementRecord]) -> String {
    let mut s = String::from("index,slope,f0_hz,fwhm_hz,snr_db,excluded\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.index,
            r.slope,
            fmt_f64(r.fit.f0),
            fmt_f64(r.fit.fwhm),
            fmt_f64(r.snr_db),
            r.excluded
        );
    }
    s
}

/// scans CSV: x_value, shift_hz, shift_sigma_hz
pub fn scan_csv(scan: &ScanResult) -> String {
    let mut s = String::from("x_value,shift_hz,shift_sigma_hz\n");
    for i in 0..scan.x_values.len() {
        let _ = writeln!(
            s,
            "{},{},{}",
            fmt_f64(scan.x_values[i]),
            fmt_f64(scan.shifts_hz[i]),
            fmt_f64(scan.sigmas_hz[i])
        );
    }
    s
}

/// reference curves CSV: z_nm, decay_rate_hz, level_shift_hz
pub fn reference_csv(points: &[ReferencePoint]) -> String {
    let mut s = String::from("z_nm,decay_rate_hz,level_shift_hz\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{}",
            fmt_f64(p.z_nm),
            fmt_f64(p.decay_rate_hz),
            fmt_f64(p.level_shift_hz)
        );
    }
    s
}

/// servo telemetry CSV: time_s, u_m, smoothed_rate, error_signal, saturated_flag
pub fn telemetry_csv(samples: &[TelemetrySample]) -> String {
    let mut s = String::from("time_s,u_m,smoothed_rate,error_signal,saturated_flag\n");
    for t in samples {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_f64(t.time_s),
            fmt_f64(t.u_m),
            fmt_f64(t.smoothed_rate),
            fmt_f64(t.error_signal),
            t.saturated as u8
        );
    }
    s
}

/// trajectory CSV: time_s, position_m, velocity_mps, mirror_m
pub fn trajectory_csv(traj: &crate::dynamics::Trajectory) -> String {
    let mut s = String::from("time_s,position_m,velocity_mps,mirror_m\n");
    for i in 0..traj.times.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_f64(traj.times[i]),
            fmt_f64(traj.positions[i]),
            fmt_f64(traj.velocities[i]),
            fmt_f64(traj.mirror_path[i])
        );
    }
    s
}

/// counts CSV: bin_start_s, counts
pub fn counts_csv(counts: &[u32], bin_width: f64) -> String {
    let mut s = String::from("bin_start_s,counts\n");
    for (i, &c) in counts.iter().enumerate() {
        let _ = writeln!(s, "{},{}", fmt_f64(i as f64 * bin_width), c);
    }
    s
}

/// spectrum CSV: frequency_hz, psd
pub fn spectrum_csv(spectrum: &crate::spectral::PowerSpectrum) -> String {
    // one-sided Welch PSD in (counts/s)^2 per Hz; integral over frequency
    // equals the variance of the rate signal
    let mut s = String::from("frequency_hz,psd\n");
    for i in 0..spectrum.frequencies.len() {
        let _ = writeln!(
            s,
            "{},{}",
            fmt_f64(spectrum.frequencies[i]),
            fmt_f64(spectrum.psd[i])
        );
    }
    s
}

/// Run manifest: resolved config, seed, model predictions, versions, and the
/// simulated-time span. Fixed top-level keys: config, seed, predictions,
/// versions, timestamps.
pub fn manifest_json(
    config: &Config,
    seed: u64,
    predictions: &Predictions,
    simulated_duration_s: f64,
) -> Result<String> {
    let doc = json!({
        "config": config,
        "seed": seed,
        "predictions": predictions,
        "versions": {
            "crate": env!("CARGO_PKG_VERSION"),
            "format": 1,
        },
        "timestamps": {
            "simulated_start_s": 0.0,
            "simulated_end_s": simulated_duration_s,
        },
    });
    Ok(format!("{}\n", serde_json::to_string_pretty(&doc)?))
}

/// Serialize any result payload as pretty JSON (for --format json).
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(format!("{}\n", serde_json::to_string_pretty(value)?))
}
