//! Fringe-lock feedback loop.
//!
//! A pure integrator steers the mirror (PZT) displacement so that the
//! exponentially smoothed photon count rate stays at a setpoint on one slope
//! of the interference fringe. The loop bandwidth sits far below the trap
//! frequency: it tracks slow drifts of the ion-mirror distance and leaves the
//! motional sideband untouched.

use crate::error::{Error, Result};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slope {
    Positive,
    Negative,
}

impl Slope {
    pub fn sign(self) -> f64 {
        match self {
            Slope::Positive => 1.0,
            Slope::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ServoConfig {
    /// Integrator gain, m per (counts/s) per s.
    pub gain: f64,
    /// +1 locks on the positive fringe slope, -1 on the negative one.
    pub sign: f64,
    /// Target count rate, counts/s.
    pub setpoint: f64,
    /// Loop time-constant scale; the default gain is derived so that
    /// 1 / (gain * fringe_slope) equals this, s.
    pub integration_time: f64,
    /// Time constant of the exponential count-rate estimator, s.
    pub smoothing_window: f64,
    /// PZT travel limit, m.
    pub actuator_range: f64,
    /// Loop update interval, s.
    pub update_period: f64,
}

impl ServoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.integration_time > 0.0) {
            return Err(Error::InvalidParameter {
                name: "integration_time",
                reason: "must be > 0".into(),
            });
        }
        if self.sign.abs() != 1.0 {
            return Err(Error::InvalidParameter {
                name: "sign",
                reason: "must be +1 or -1".into(),
            });
        }
        if !(self.update_period > 0.0 && self.update_period <= self.integration_time / 10.0) {
            return Err(Error::InvalidParameter {
                name: "update_period",
                reason: format!(
                    "must be positive and <= integration_time/10 = {}",
                    self.integration_time / 10.0
                ),
            });
        }
        Ok(())
    }

    /// Gain realizing a loop time constant of `integration_time` on a fringe
    /// with the given mid-slope steepness (counts/s per m).
    pub fn gain_for_slope(integration_time: f64, fringe_slope: f64) -> f64 {
        1.0 / (integration_time * fringe_slope.abs())
    }

    /// Select the requested slope: positive slope needs sign = +1 for
    /// negative feedback, negative slope sign = -1.
    pub fn select_slope(mut self, target: Slope) -> Self {
        self.sign = target.sign();
        self
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ServoState {
    /// Mirror displacement applied by the loop, m.
    pub u: f64,
    /// Smoothed count rate, counts/s.
    pub smoothed_rate: f64,
    /// Cleared when the actuator saturates.
    pub locked: bool,
}

impl ServoState {
    pub fn new(initial_rate: f64) -> Self {
        Self {
            u: 0.0,
            smoothed_rate: initial_rate,
            locked: true,
        }
    }
}

/// One servo update: exponential smoothing of the windowed rate, then an
/// integrator step on the smoothed error, clamped to the actuator range.
pub fn update(state: &mut ServoState, counts_in_window: f64, config: &ServoConfig, dt: f64) {
    let rate = counts_in_window / dt;
    let alpha = 1.0 - (-dt / config.smoothing_window.max(1e-12)).exp();
    state.smoothed_rate += alpha * (rate - state.smoothed_rate);
    let error = config.setpoint - state.smoothed_rate;
    state.u += config.sign * config.gain * error * dt;
    if state.u.abs() > config.actuator_range {
        state.u = state.u.clamp(-config.actuator_range, config.actuator_range);
        state.locked = false;
    }
}

/// Discrete-loop stability bound for the linearized fringe (no smoothing):
/// stable iff gain * |fringe_slope| * update_period < 2.
pub fn stability_margin(gain: f64, fringe_slope: f64, update_period: f64) -> f64 {
    gain * fringe_slope.abs() * update_period
}

/// RMS of the slow component of an ion-mirror distance record, in nm.
///
/// Samples must be uniformly spaced by `sample_dt`. Components above ~100 Hz
/// are removed with a 10 ms moving average before taking the RMS about the
/// mean.
pub fn lock_quality(z_rel: &[f64], sample_dt: f64, integration_time: f64) -> Result<f64> {
    let window = z_rel.len() as f64 * sample_dt;
    if window < 10.0 * integration_time {
        return Err(Error::InsufficientLockData {
            window,
            integration_time,
        });
    }
    let avg_len = ((0.01 / sample_dt).round() as usize).max(1);
    let mut slow = Vec::with_capacity(z_rel.len() / avg_len);
    let mut acc = 0.0;
    for (i, &z) in z_rel.iter().enumerate() {
        acc += z;
        if (i + 1) % avg_len == 0 {
            slow.push(acc / avg_len as f64);
            acc = 0.0;
        }
    }
    if slow.is_empty() {
        slow.push(acc / (z_rel.len() % avg_len).max(1) as f64);
    }
    let mean = slow.iter().sum::<f64>() / slow.len() as f64;
    let rms =
        (slow.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / slow.len() as f64).sqrt();
    Ok(rms * 1e9)
}

/// Injected ion-mirror distance disturbance: linear ramp + sinusoid + random
/// walk. Magnitudes are free parameters (the published experiment reports
/// none).
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct DriftModel {
    /// m/s.
    pub ramp: f64,
    /// m.
    pub sine_amplitude: f64,
    /// Hz.
    pub sine_frequency: f64,
    /// m per sqrt(s).
    pub walk_intensity: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DriftState {
    pub walk: f64,
}

impl DriftModel {
    /// Disturbance value at time t; the random-walk term is advanced by dt.
    pub fn advance<R: Rng>(&self, state: &mut DriftState, t: f64, dt: f64, rng: &mut R) -> f64 {
        if self.walk_intensity != 0.0 {
            let kick: f64 = rng.sample(rand_distr::StandardNormal);
            state.walk += self.walk_intensity * dt.sqrt() * kick;
        }
        self.ramp * t
            + self.sine_amplitude * (core::f64::consts::TAU * self.sine_frequency * t).sin()
            + state.walk
    }
}

/// Analytic fringe plant used by the servo-only stress test: mean rate
/// r0 (1 - contrast cos(2 k z)).
#[derive(Debug, Clone, Copy)]
pub struct FringePlant {
    /// Mid-fringe rate, counts/s.
    pub r0: f64,
    /// Effective detected contrast (after motional smearing).
    pub contrast: f64,
    /// 2k, rad/m.
    pub two_k: f64,
}

impl FringePlant {
    pub fn rate(&self, z: f64) -> f64 {
        self.r0 * (1.0 - self.contrast * (self.two_k * z).cos())
    }

    /// Mid-slope steepness |d rate / dz|, counts/s per m.
    pub fn mid_slope(&self) -> f64 {
        self.r0 * self.contrast * self.two_k
    }

    /// Phase 2kz at which the mean rate equals `setpoint` on the requested
    /// slope, if reachable.
    pub fn setpoint_to_phase(&self, setpoint: f64, slope: Slope) -> Option<f64> {
        let c = (1.0 - setpoint / self.r0) / self.contrast;
        if !(-1.0..=1.0).contains(&c) {
            return None;
        }
        let theta = c.acos(); // in (0, pi): positive slope
        Some(match slope {
            Slope::Positive => theta,
            Slope::Negative => core::f64::consts::TAU - theta,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TelemetrySample {
    pub time_s: f64,
    pub u_m: f64,
    pub smoothed_rate: f64,
    pub error_signal: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone)]
pub struct LockRun {
    pub telemetry: Vec<TelemetrySample>,
    /// Ion-mirror distance deviation from the commanded lock point at each
    /// update, m.
    pub z_residual: Vec<f64>,
    pub sample_dt: f64,
    pub lost_lock: bool,
}

/// Servo-only closed-loop simulation against the analytic fringe with Poisson
/// counting noise and an injected drift. The ion's MHz oscillation averages
/// out over an update window and is not modeled here.
pub fn run_lock_sim<R: Rng>(
    plant: &FringePlant,
    config: &ServoConfig,
    drift: &DriftModel,
    z_lock: f64,
    duration: f64,
    rng: &mut R,
) -> Result<LockRun> {
    config.validate()?;
    let dt = config.update_period;
    let n = (duration / dt).round() as usize;
    let mut state = ServoState::new(config.setpoint);
    let mut drift_state = DriftState::default();
    let mut telemetry = Vec::with_capacity(n);
    let mut z_residual = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let d = drift.advance(&mut drift_state, t, dt, rng);
        let z = z_lock + state.u + d;
        let mean_counts = plant.rate(z) * dt;
        let counts = if mean_counts > 0.0 {
            Poisson::new(mean_counts)
                .map(|p| p.sample(rng))
                .unwrap_or(0.0)
        } else {
            0.0
        };
        update(&mut state, counts, config, dt);
        telemetry.push(TelemetrySample {
            time_s: t,
            u_m: state.u,
            smoothed_rate: state.smoothed_rate,
            error_signal: config.setpoint - state.smoothed_rate,
            saturated: !state.locked,
        });
        z_residual.push(state.u + d);
    }
    Ok(LockRun {
        telemetry,
        z_residual,
        sample_dt: dt,
        lost_lock: !state.locked,
    })
}
