//! Stochastic 1-D simulation of the ion's motion along the observed trap
//! mode, and the detected photon event stream.
//!
//! The equation of motion combines the trap restoring force, the projected
//! mirror force, linear laser-cooling damping, and white momentum diffusion:
//!
//! ```text
//! m dv = [ -m w_trap^2 q + proj * P_e hbar k eps Gamma cos(2k z) - m gamma_c v ] dt
//!        + m sqrt(2 D) dW,     z = mirror + proj * q
//! ```
//!
//! integrated with a splitting scheme: velocity-Verlet half-steps around an
//! exact Ornstein-Uhlenbeck damping/noise kick. Photon detections are an
//! inhomogeneous Poisson process, sampled exactly by thinning against the
//! fringe-maximum rate.
//!
//! The detected fringe contrast is a separate parameter from the mirror
//! coupling eps: the retro-reflected field interferes with the directly
//! detected field in the same spatial mode, so the count-rate fringe is much
//! deeper than the eps-scaled decay-rate modulation that drives the forces.
//! Setting `detection_contrast = eps` recovers the bare modified-decay-rate
//! signal.

use crate::error::{Error, Result};
use crate::model::IonMirrorSystem;
use crate::servo::{self, DriftModel, DriftState, ServoConfig, ServoState, TelemetrySample};
use crate::units::HBAR;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Count rate that calibrates the detection efficiency: 10000 counts/s at
/// P_e = 0.1 (mid-fringe).
pub const CALIBRATION_RATE: f64 = 1.0e4;
pub const CALIBRATION_PE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialState {
    /// Draw (q, v) from the thermal steady state set by (cooling_rate, diffusion).
    Thermal,
    Fixed { q: f64, v: f64 },
}

/// Simulation parameters. All SI.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimParams {
    /// Integrator step, s.
    pub dt: f64,
    /// Recorded duration, s.
    pub duration: f64,
    /// Settling time before recording starts, s.
    pub warmup: f64,
    pub seed: u64,
    /// cos(mode angle): couples the mode coordinate to the optical axis.
    pub projection: f64,
    /// Velocity damping rate gamma_c, 1/s.
    pub cooling_rate: f64,
    /// Velocity diffusion coefficient D, m^2/s^3.
    pub diffusion: f64,
    /// Photon detection efficiency, (0, 1].
    pub detection_efficiency: f64,
    /// Fringe contrast of the detected count rate, [0, 1].
    pub detection_contrast: f64,
    /// Photon-count bin width used by downstream binning, s.
    pub bin_width: f64,
    /// Trajectory decimation: record every Nth step (0 disables recording).
    pub record_stride: usize,
    /// Commanded ion-mirror phase position z0, m.
    pub mirror_offset: f64,
    /// Apply the mode projection to model-level shift predictions when
    /// comparing simulation output against the closed-form values.
    pub apply_projection_to_model: bool,
    pub initial: InitialState,
}

impl SimParams {
    /// Defaults for the given system: dt = 1/(100 f_trap), projection from
    /// the trap geometry, detection efficiency from the count calibration,
    /// cooling calibrated to a 500 Hz sideband.
    pub fn for_system(sys: &IonMirrorSystem<f64>, seed: u64) -> Self {
        let f_trap = sys.trap.omega_trap() / core::f64::consts::TAU;
        let projection = sys.trap.projection();
        let (cooling_rate, diffusion) =
            calibrate_cooling(500.0, sys, projection, DEFAULT_MODULATION_INDEX).unwrap();
        Self {
            dt: 1.0 / (100.0 * f_trap),
            duration: 1.0,
            warmup: 0.0,
            seed,
            projection,
            cooling_rate,
            diffusion,
            detection_efficiency: detection_efficiency_from_calibration(sys),
            detection_contrast: DEFAULT_DETECTION_CONTRAST,
            bin_width: 1e-7,
            record_stride: 0,
            mirror_offset: sys.slope_midpoint(true),
            apply_projection_to_model: false,
            initial: InitialState::Thermal,
        }
    }

    pub fn validate(&self, sys: &IonMirrorSystem<f64>) -> Result<()> {
        let f_trap = sys.trap.omega_trap() / core::f64::consts::TAU;
        if !(self.dt > 0.0 && self.dt <= 1.0 / (50.0 * f_trap) * (1.0 + 1e-12)) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be in (0, 1/(50 f_trap)] = (0, {:.3e}]", 1.0 / (50.0 * f_trap)),
            });
        }
        if self.duration < 100.0 * self.bin_width {
            return Err(Error::InvalidParameter {
                name: "duration",
                reason: "must cover at least 100 count bins".into(),
            });
        }
        if !(self.detection_efficiency > 0.0 && self.detection_efficiency <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "detection_efficiency",
                reason: "must be in (0, 1]".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.detection_contrast) {
            return Err(Error::InvalidParameter {
                name: "detection_contrast",
                reason: "must be in [0, 1]".into(),
            });
        }
        if self.cooling_rate < 0.0 || self.diffusion < 0.0 {
            return Err(Error::InvalidParameter {
                name: "cooling_rate/diffusion",
                reason: "must be >= 0".into(),
            });
        }
        Ok(())
    }

    /// Thermal RMS excursion sqrt(D / (gamma w^2)), m.
    pub fn q_rms(&self, sys: &IonMirrorSystem<f64>) -> f64 {
        if self.cooling_rate <= 0.0 {
            return 0.0;
        }
        let w = sys.trap.omega_trap();
        (self.diffusion / self.cooling_rate).sqrt() / w
    }

    /// Fringe modulation index 2 k proj q_rms.
    pub fn modulation_index(&self, sys: &IonMirrorSystem<f64>) -> f64 {
        2.0 * sys.ion.wavenumber() * self.projection * self.q_rms(sys)
    }

    /// Gaussian smearing of the fringe seen by the oscillating ion,
    /// exp(-chi^2/2). Scales both the effective detected contrast and the
    /// mirror-curvature frequency shift (equivalent linearization).
    pub fn smear_factor(&self, sys: &IonMirrorSystem<f64>) -> f64 {
        let chi = self.modulation_index(sys);
        (-chi * chi / 2.0).exp()
    }
}

/// Default detected fringe contrast of the count signal.
pub const DEFAULT_DETECTION_CONTRAST: f64 = 0.95;

/// Default target for the fringe modulation index 2 k proj q_rms; keeps the
/// sideband visible without washing out the mirror curvature.
pub const DEFAULT_MODULATION_INDEX: f64 = 1.1;

/// Detection efficiency such that eta P_e Gamma = 10^4 counts/s at P_e = 0.1.
pub fn detection_efficiency_from_calibration(sys: &IonMirrorSystem<f64>) -> f64 {
    CALIBRATION_RATE / (CALIBRATION_PE * sys.ion.decay_rate())
}

/// Mid-fringe mean count rate eta P_e Gamma, counts/s.
pub fn mean_count_rate(sys: &IonMirrorSystem<f64>, params: &SimParams) -> f64 {
    params.detection_efficiency * sys.excitation.p_e() * sys.ion.decay_rate()
}

/// Cooling calibration: gamma_c = 2 pi target_fwhm (the sideband width is the
/// steady-state cooling/heating rate), and D placing the thermal excursion at
/// the requested fringe modulation index:
/// q_rms = index / (2 k proj), D = gamma_c (w_trap q_rms)^2.
pub fn calibrate_cooling(
    target_fwhm_hz: f64,
    sys: &IonMirrorSystem<f64>,
    projection: f64,
    modulation_index: f64,
) -> Result<(f64, f64)> {
    if !(target_fwhm_hz > 0.0) {
        return Err(Error::InvalidParameter {
            name: "target_fwhm",
            reason: "must be > 0".into(),
        });
    }
    let gamma = core::f64::consts::TAU * target_fwhm_hz;
    let q_rms = modulation_index / (2.0 * sys.ion.wavenumber() * projection);
    let w = sys.trap.omega_trap();
    Ok((gamma, gamma * (w * q_rms) * (w * q_rms)))
}

/// Expected sideband visibility above the shot-noise floor, dB:
/// 10 log10(2 r0 C^2 exp(-chi^2) chi^2 / gamma_c), from the fundamental-band
/// power of the phase-modulated fringe signal against the 2 r0 floor.
pub fn predicted_snr_db(sys: &IonMirrorSystem<f64>, params: &SimParams) -> f64 {
    let r0 = mean_count_rate(sys, params);
    let chi = params.modulation_index(sys);
    let c = params.detection_contrast;
    let s = 2.0 * r0 * c * c * (-chi * chi).exp() * chi * chi / params.cooling_rate;
    10.0 * s.log10()
}

/// Sideband-measured trap-frequency shift amplitude, Hz: the model shift
/// scaled by projection^2 (mode geometry) and the amplitude smearing factor.
pub fn predicted_mode_shift_hz(sys: &IonMirrorSystem<f64>, params: &SimParams) -> f64 {
    let base = crate::units::angular_to_hz(sys.shift_coefficient());
    base * params.projection * params.projection * params.smear_factor(sys)
}

/// Decimated trajectory record.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// s, relative to the start of the recorded span.
    pub times: Vec<f64>,
    /// Mode coordinate q, m.
    pub positions: Vec<f64>,
    /// m/s.
    pub velocities: Vec<f64>,
    /// Mirror displacement (servo + drift) at each sample, m.
    pub mirror_path: Vec<f64>,
    /// Sample spacing (dt * record_stride), s.
    pub sample_dt: f64,
}

/// Detected photon events over the recorded span.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonRecord {
    /// Strictly increasing event times in [0, duration), s.
    pub event_times: Vec<f64>,
    pub duration: f64,
}

impl PhotonRecord {
    pub fn mean_rate(&self) -> f64 {
        self.event_times.len() as f64 / self.duration
    }

    pub fn bin(&self, bin_width: f64) -> Vec<u32> {
        bin_counts(&self.event_times, bin_width, self.duration)
    }
}

/// Left-closed binning: counts[i] = number of events in [i Delta, (i+1) Delta).
pub fn bin_counts(event_times: &[f64], bin_width: f64, duration: f64) -> Vec<u32> {
    let n = (duration / bin_width).round().max(0.0) as usize;
    let mut counts = vec![0u32; n];
    for &t in event_times {
        if t >= 0.0 {
            let i = (t / bin_width) as usize;
            if i < n {
                counts[i] += 1;
            }
        }
    }
    counts
}

/// Inhomogeneous Poisson sampling by thinning: candidate events at the
/// majorant rate, accepted with probability rate(t)/rate_max. Exact in
/// distribution when rate(t) <= rate_max throughout.
pub fn emit_photons<R: Rng>(
    mut rate_fn: impl FnMut(f64) -> f64,
    t0: f64,
    t1: f64,
    rate_max: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut events = Vec::new();
    if rate_max <= 0.0 {
        return Ok(events);
    }
    let mut t = t0;
    loop {
        let gap: f64 = rng.sample::<f64, _>(rand_distr::Exp1) / rate_max;
        t += gap;
        if t >= t1 {
            break;
        }
        let r = rate_fn(t);
        if r > rate_max * (1.0 + 1e-9) {
            return Err(Error::MajorantViolated {
                t,
                rate: r,
                rate_max,
            });
        }
        if rng.random::<f64>() * rate_max < r {
            events.push(t);
        }
    }
    Ok(events)
}

/// Single-step integrator: velocity-Verlet half-steps around an exact OU kick.
pub struct Integrator {
    half_dt: f64,
    w2: f64,
    /// Projected mirror-force acceleration amplitude proj P_e hbar k eps Gamma / m.
    force_amp: f64,
    two_k: f64,
    projection: f64,
    ou_decay: f64,
    ou_sigma: f64,
}

impl Integrator {
    pub fn new(sys: &IonMirrorSystem<f64>, params: &SimParams) -> Self {
        let k = sys.ion.wavenumber();
        let w = sys.trap.omega_trap();
        let g = params.cooling_rate;
        let dt = params.dt;
        let ou_decay = (-g * dt).exp();
        let ou_sigma = if g > 0.0 {
            (params.diffusion / g * (1.0 - ou_decay * ou_decay)).sqrt()
        } else {
            (2.0 * params.diffusion * dt).sqrt()
        };
        Self {
            half_dt: dt / 2.0,
            w2: w * w,
            force_amp: params.projection
                * sys.excitation.p_e()
                * HBAR
                * k
                * sys.mirror.epsilon()
                * sys.ion.decay_rate()
                / sys.ion.mass(),
            two_k: k * 2.0,
            projection: params.projection,
            ou_decay,
            ou_sigma,
        }
    }

    #[inline]
    pub fn acceleration(&self, q: f64, mirror: f64) -> f64 {
        -self.w2 * q + self.force_amp * (self.two_k * (mirror + self.projection * q)).cos()
    }

    /// Advance (q, v) by one dt. `accel` carries the cached acceleration at
    /// the current position and is updated in place.
    #[inline]
    pub fn step<R: Rng>(
        &self,
        q: &mut f64,
        v: &mut f64,
        accel: &mut f64,
        mirror: f64,
        rng: &mut R,
    ) {
        *v += *accel * self.half_dt;
        *q += *v * self.half_dt;
        let xi: f64 = rng.sample(StandardNormal);
        *v = self.ou_decay * *v + self.ou_sigma * xi;
        *q += *v * self.half_dt;
        *accel = self.acceleration(*q, mirror);
        *v += *accel * self.half_dt;
    }
}

/// Running aggregates over the recorded span.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct RunStats {
    pub mean_position: f64,
    pub mean_velocity_squared: f64,
    pub n_events: usize,
    pub mean_rate: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub photons: PhotonRecord,
    pub telemetry: Vec<TelemetrySample>,
    pub stats: RunStats,
    pub lost_lock: bool,
}

/// End-to-end emulation of one measurement run: trajectory integration,
/// photon thinning at the modified scattering rate, and (optionally) the
/// fringe-lock servo with injected drift.
///
/// Deterministic given (seed, sys, params): the dynamics noise, photon
/// thinning, initial state, and drift walk each draw from their own
/// ChaCha8 stream derived from `params.seed`.
pub fn simulate_run(
    sys: &IonMirrorSystem<f64>,
    params: &SimParams,
    servo: Option<(&ServoConfig, &DriftModel)>,
) -> Result<RunOutput> {
    params.validate(sys)?;
    if let Some((cfg, _)) = servo {
        cfg.validate()?;
    }

    let mut dyn_rng = ChaCha8Rng::seed_from_u64(params.seed);
    dyn_rng.set_stream(0);
    let mut photon_rng = ChaCha8Rng::seed_from_u64(params.seed);
    photon_rng.set_stream(1);
    let mut init_rng = ChaCha8Rng::seed_from_u64(params.seed);
    init_rng.set_stream(2);
    let mut drift_rng = ChaCha8Rng::seed_from_u64(params.seed);
    drift_rng.set_stream(3);

    let integ = Integrator::new(sys, params);
    let dt = params.dt;
    let n_warm = (params.warmup / dt).round() as u64;
    let n_rec = (params.duration / dt).round() as u64;
    let n_total = n_warm + n_rec;
    let t_record_start = n_warm as f64 * dt;

    let (mut q, mut v) = match params.initial {
        InitialState::Fixed { q, v } => (q, v),
        InitialState::Thermal => {
            if params.cooling_rate > 0.0 && params.diffusion > 0.0 {
                let v_rms = (params.diffusion / params.cooling_rate).sqrt();
                let q_rms = v_rms / sys.trap.omega_trap();
                let gq: f64 = init_rng.sample(StandardNormal);
                let gv: f64 = init_rng.sample(StandardNormal);
                (q_rms * gq, v_rms * gv)
            } else {
                (0.0, 0.0)
            }
        }
    };

    // photon process
    let r0 = mean_count_rate(sys, params);
    let contrast = params.detection_contrast;
    let rate_max = r0 * (1.0 + contrast);
    let two_k = 2.0 * sys.ion.wavenumber();
    let mut next_candidate = if rate_max > 0.0 {
        photon_rng.sample::<f64, _>(rand_distr::Exp1) / rate_max
    } else {
        f64::INFINITY
    };
    let mut events: Vec<f64> = Vec::new();

    // servo bookkeeping
    let steps_per_update = servo
        .map(|(cfg, _)| ((cfg.update_period / dt).round() as u64).max(1))
        .unwrap_or(u64::MAX);
    let mut servo_state = servo.map(|(cfg, _)| ServoState::new(cfg.setpoint));
    let mut drift_state = DriftState::default();
    let mut window_counts = 0.0f64;
    let mut telemetry = Vec::new();
    let mut mirror_disp = 0.0; // servo u + drift, m
    let mut lost_lock = false;

    // recording
    let stride = params.record_stride as u64;
    let mut trajectory = Trajectory {
        times: Vec::new(),
        positions: Vec::new(),
        velocities: Vec::new(),
        mirror_path: Vec::new(),
        sample_dt: dt * params.record_stride.max(1) as f64,
    };

    let mut sum_q = 0.0;
    let mut sum_v2 = 0.0;

    let mut mirror = params.mirror_offset + mirror_disp;
    let mut accel = integ.acceleration(q, mirror);

    for i in 0..n_total {
        integ.step(&mut q, &mut v, &mut accel, mirror, &mut dyn_rng);
        let t_end = (i + 1) as f64 * dt;

        // photon candidates that fall inside this step
        while next_candidate < t_end {
            let rate = r0 * (1.0 - contrast * (two_k * (mirror + integ.projection * q)).cos());
            if rate > rate_max * (1.0 + 1e-9) {
                return Err(Error::MajorantViolated {
                    t: next_candidate,
                    rate,
                    rate_max,
                });
            }
            if photon_rng.random::<f64>() * rate_max < rate {
                window_counts += 1.0;
                if next_candidate >= t_record_start {
                    events.push(next_candidate - t_record_start);
                }
            }
            next_candidate += photon_rng.sample::<f64, _>(rand_distr::Exp1) / rate_max;
        }

        // servo / drift update at the loop cadence
        if (i + 1) % steps_per_update == 0 {
            if let (Some((cfg, drift)), Some(state)) = (servo, servo_state.as_mut()) {
                let d = drift.advance(&mut drift_state, t_end, cfg.update_period, &mut drift_rng);
                servo::update(state, window_counts, cfg, cfg.update_period);
                window_counts = 0.0;
                mirror_disp = state.u + d;
                mirror = params.mirror_offset + mirror_disp;
                accel = integ.acceleration(q, mirror);
                lost_lock |= !state.locked;
                telemetry.push(TelemetrySample {
                    time_s: t_end,
                    u_m: state.u,
                    smoothed_rate: state.smoothed_rate,
                    error_signal: cfg.setpoint - state.smoothed_rate,
                    saturated: !state.locked,
                });
            }
        }

        if i >= n_warm {
            sum_q += q;
            sum_v2 += v * v;
            if stride > 0 && (i - n_warm) % stride == 0 {
                trajectory.times.push((i - n_warm) as f64 * dt);
                trajectory.positions.push(q);
                trajectory.velocities.push(v);
                trajectory.mirror_path.push(mirror_disp);
            }
        }

        if i % 4096 == 0 && !(q.is_finite() && v.is_finite()) {
            return Err(Error::NonFiniteState { t: t_end, q, v });
        }
    }
    if !(q.is_finite() && v.is_finite()) {
        return Err(Error::NonFiniteState {
            t: n_total as f64 * dt,
            q,
            v,
        });
    }

    let stats = RunStats {
        mean_position: sum_q / n_rec.max(1) as f64,
        mean_velocity_squared: sum_v2 / n_rec.max(1) as f64,
        n_events: events.len(),
        mean_rate: events.len() as f64 / params.duration,
    };
    Ok(RunOutput {
        trajectory,
        photons: PhotonRecord {
            event_times: events,
            duration: params.duration,
        },
        telemetry,
        stats,
        lost_lock,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Excitation, MirrorCoupling};
    use crate::spectral::{fit_lorentzian, WindowKind};
    use crate::stats::{chi_square_sf, poisson_pmf};
    use approx::assert_relative_eq;

    fn sys() -> IonMirrorSystem<f64> {
        IonMirrorSystem::typical()
    }

    fn base_params(seed: u64) -> SimParams {
        SimParams::for_system(&sys(), seed)
    }

    #[test]
    fn energy_conserved_without_noise_or_mirror() {
        let mut s = sys();
        s.mirror = MirrorCoupling::new(0.0, 0.25).unwrap();
        let mut p = base_params(1);
        p.dt = 2e-10;
        p.cooling_rate = 0.0;
        p.diffusion = 0.0;
        let integ = Integrator::new(&s, &p);
        let m = s.ion.mass();
        let w2 = s.trap.omega_trap().powi(2);
        let (mut q, mut v) = (10e-9, 0.0);
        let mut accel = integ.acceleration(q, 0.0);
        let e0 = 0.5 * m * v * v + 0.5 * m * w2 * q * q;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut worst: f64 = 0.0;
        for _ in 0..100_000 {
            integ.step(&mut q, &mut v, &mut accel, 0.0, &mut rng);
            let e = 0.5 * m * v * v + 0.5 * m * w2 * q * q;
            worst = worst.max(((e - e0) / e0).abs());
        }
        assert!(worst < 1e-6, "relative energy error {worst}");
    }

    #[test]
    fn ou_velocity_variance_matches_fluctuation_dissipation() {
        let mut s = sys();
        s.mirror = MirrorCoupling::new(0.0, 0.25).unwrap();
        let mut p = base_params(7);
        p.dt = 1e-8;
        p.cooling_rate = 1e4;
        p.diffusion = 1e4 * 1e-4; // v_rms = 0.01 m/s
        p.duration = 1.0;
        p.warmup = 0.01;
        p.detection_efficiency = 1e-6; // keep the photon side quiet
        let out = simulate_run(&s, &p, None).unwrap();
        let expected = p.diffusion / p.cooling_rate;
        assert_relative_eq!(out.stats.mean_velocity_squared, expected, max_relative = 0.05);
    }

    #[test]
    fn sideband_frequency_shift_tracks_modified_trap_frequency() {
        // strong coupling so the shift is large against the fit noise
        let mut s = sys();
        s.mirror = MirrorCoupling::new(0.15, 0.25).unwrap();
        let mut p = base_params(3);
        p.dt = 1e-8;
        // narrow line, small excursion (chi ~ 0.2 keeps smearing at 2%)
        let (g, d) = calibrate_cooling(60.0, &s, p.projection, 0.2).unwrap();
        p.cooling_rate = g;
        p.diffusion = d;
        p.duration = 0.6;
        p.warmup = 0.02;
        p.record_stride = 16;

        let f0_at = |positive: bool, seed: u64| {
            let mut pp = p;
            pp.seed = seed;
            pp.mirror_offset = s.slope_midpoint(positive);
            let out = simulate_run(&s, &pp, None).unwrap();
            // PSD of the position record
            let ps = crate::spectral::estimate_psd(
                &out.trajectory.positions,
                out.trajectory.sample_dt,
                1 << 19,
                0.5,
                WindowKind::Hann,
            )
            .unwrap();
            let f_trap = s.trap.omega_trap() / core::f64::consts::TAU;
            let fit = fit_lorentzian(&ps, (f_trap - 3000.0, f_trap + 3000.0)).unwrap();
            assert!(fit.converged && !fit.no_peak);
            fit.f0
        };
        let diff = f0_at(true, 11) - f0_at(false, 12);
        let expected = 2.0 * predicted_mode_shift_hz(&s, &p);
        assert_relative_eq!(diff, expected, max_relative = 0.10);
    }

    #[test]
    fn homogeneous_poisson_fano_factor() {
        let mut p = base_params(5);
        p.detection_contrast = 0.0; // no fringe: homogeneous stream
        p.dt = 1.96e-8;
        p.duration = 2.0;
        let out = simulate_run(&sys(), &p, None).unwrap();
        let counts = out.photons.bin(1e-3);
        let n = counts.len() as f64;
        let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
        let var = counts
            .iter()
            .map(|&c| (c as f64 - mean) * (c as f64 - mean))
            .sum::<f64>()
            / (n - 1.0);
        let fano = var / mean;
        let sigma = (2.0 / n).sqrt();
        assert!((fano - 1.0).abs() < 3.0 * sigma, "Fano = {fano}");
    }

    #[test]
    fn mean_rate_matches_modified_decay_rate() {
        // ion pinned near a fringe extremum with tiny excursions
        let s = sys();
        let mut p = base_params(6);
        p.dt = 1.96e-8;
        let (g, d) = calibrate_cooling(500.0, &s, p.projection, 0.02).unwrap();
        p.cooling_rate = g;
        p.diffusion = d;
        p.duration = 4.0;
        p.mirror_offset = 0.0; // cos(2kz) = +1
        let out = simulate_run(&s, &p, None).unwrap();
        let r0 = mean_count_rate(&s, &p);
        let expected = r0 * (1.0 - p.detection_contrast);
        let sigma = (expected * p.duration).sqrt() / p.duration;
        assert!(
            (out.stats.mean_rate - expected).abs() < 2.0 * sigma + 0.01 * expected,
            "rate {} vs expected {expected}",
            out.stats.mean_rate
        );
    }

    #[test]
    fn equilibrium_displacement_follows_static_force() {
        // boosted coupling, tight cooling: displacement ~ nm against sub-nm noise
        let mut s = sys();
        s.mirror = MirrorCoupling::new(0.5, 0.25).unwrap();
        s.excitation = Excitation::new(0.4).unwrap();
        let mut p = base_params(8);
        p.dt = 1e-8;
        p.cooling_rate = 1e5;
        let w = s.trap.omega_trap();
        let q_rms_target: f64 = 3e-10;
        p.diffusion = p.cooling_rate * (w * q_rms_target) * (w * q_rms_target);
        p.duration = 1.0;
        p.warmup = 0.01;
        p.detection_efficiency = 1e-6;
        for (offset, sign) in [(0.0, 1.0), (s.ion.wavelength() / 4.0, -1.0)] {
            p.mirror_offset = offset;
            let out = simulate_run(&s, &p, None).unwrap();
            let expected = sign * p.projection * s.mirror_force(offset).abs()
                / (s.ion.mass() * w * w);
            assert_relative_eq!(out.stats.mean_position, expected, max_relative = 0.10);
        }
    }

    #[test]
    fn thinning_constant_rate_is_poisson() {
        // chi-square goodness of fit over 10^4 trials of Poisson(20)
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rate = 10.0;
        let t1 = 2.0;
        let lambda = rate * t1;
        let n_trials = 10_000;
        let mut histogram = std::collections::HashMap::<u64, f64>::new();
        for _ in 0..n_trials {
            let ev = emit_photons(|_| rate, 0.0, t1, rate * 1.5, &mut rng).unwrap();
            *histogram.entry(ev.len() as u64).or_default() += 1.0;
        }
        // bins with expected count >= 5
        let mut chi2 = 0.0;
        let mut dof: i64 = -1;
        let mut tail_obs = 0.0;
        let mut tail_exp = 0.0;
        for k in 0..200u64 {
            let e = n_trials as f64 * poisson_pmf(k, lambda);
            let o = histogram.get(&k).copied().unwrap_or(0.0);
            if e >= 5.0 {
                chi2 += (o - e) * (o - e) / e;
                dof += 1;
            } else {
                tail_obs += o;
                tail_exp += e;
            }
        }
        if tail_exp > 0.0 {
            chi2 += (tail_obs - tail_exp) * (tail_obs - tail_exp) / tail_exp;
            dof += 1;
        }
        let p = chi_square_sf(chi2, dof.max(1) as usize);
        assert!(p > 0.01, "chi2 = {chi2}, dof = {dof}, p = {p}");
    }

    #[test]
    fn thinning_zero_rate_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ev = emit_photons(|_| 0.0, 0.0, 10.0, 100.0, &mut rng).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn thinning_detects_violated_majorant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = emit_photons(|_| 200.0, 0.0, 10.0, 100.0, &mut rng);
        assert!(matches!(r, Err(Error::MajorantViolated { .. })));
    }

    #[test]
    fn thinning_sinusoidal_rate_reproduces_modulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f = 5.0;
        let rate = |t: f64| 4000.0 * (1.0 + 0.5 * (core::f64::consts::TAU * f * t).sin());
        let ev = emit_photons(rate, 0.0, 50.0, 6000.0, &mut rng).unwrap();
        // fold into phase bins over the known period
        let n_bins = 20;
        let mut counts = vec![0.0; n_bins];
        for t in &ev {
            let phase = (t * f).fract();
            counts[(phase * n_bins as f64) as usize] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        for (i, &c) in counts.iter().enumerate() {
            let phase = (i as f64 + 0.5) / n_bins as f64;
            let expected = total / n_bins as f64
                * (1.0 + 0.5 * (core::f64::consts::TAU * phase).sin());
            let sigma = expected.sqrt();
            assert!((c - expected).abs() < 4.0 * sigma, "bin {i}: {c} vs {expected}");
        }
    }

    #[test]
    fn bin_counts_conventions() {
        assert_eq!(bin_counts(&[], 0.1, 1.0), vec![0; 10]);
        // events exactly on boundaries land in the right-hand bin
        let counts = bin_counts(&[0.0, 0.1, 0.2], 0.1, 0.3);
        assert_eq!(counts, vec![1, 1, 1]);
        // totals conserved for in-range events
        let ev: Vec<f64> = (0..1000).map(|i| i as f64 * 0.00097).collect();
        let counts = bin_counts(&ev, 0.01, 1.0);
        assert_eq!(counts.iter().sum::<u32>(), 1000);
    }

    #[test]
    fn identical_seeds_give_identical_runs() {
        let s = sys();
        let mut p = base_params(123);
        p.dt = 1.96e-8;
        p.duration = 0.2;
        p.record_stride = 64;
        let cfg = ServoConfig {
            gain: ServoConfig::gain_for_slope(
                0.15,
                mean_count_rate(&s, &p) * p.detection_contrast * p.smear_factor(&s)
                    * 2.0
                    * s.ion.wavenumber(),
            ),
            sign: 1.0,
            setpoint: mean_count_rate(&s, &p),
            integration_time: 0.15,
            smoothing_window: 0.05,
            actuator_range: 2e-6,
            update_period: 0.01,
        };
        let drift = DriftModel {
            ramp: 5e-9,
            walk_intensity: 1e-9,
            ..Default::default()
        };
        let a = simulate_run(&s, &p, Some((&cfg, &drift))).unwrap();
        let b = simulate_run(&s, &p, Some((&cfg, &drift))).unwrap();
        assert_eq!(a.photons.event_times, b.photons.event_times);
        assert_eq!(a.trajectory.positions, b.trajectory.positions);
        assert_eq!(a.stats.n_events, b.stats.n_events);
    }

    #[test]
    fn calibrate_cooling_contract() {
        let s = sys();
        let (g, _) = calibrate_cooling(500.0, &s, s.trap.projection(), 1.1).unwrap();
        assert_relative_eq!(g, core::f64::consts::TAU * 500.0, max_relative = 1e-12);
        let (g2, d2) = calibrate_cooling(1000.0, &s, s.trap.projection(), 1.1).unwrap();
        assert_relative_eq!(g2, 2.0 * g, max_relative = 1e-12);
        assert!(d2 > 0.0);
        assert!(calibrate_cooling(0.0, &s, 0.5878, 1.1).is_err());
    }

    #[test]
    fn default_calibration_hits_paper_band() {
        // at the P_e = 0.1 calibration point the predicted sideband SNR sits
        // inside the reported 2-10 dB window
        let mut s = sys();
        s.excitation = Excitation::new(0.1).unwrap();
        let p = SimParams::for_system(&s, 0);
        let snr = predicted_snr_db(&s, &p);
        assert!((2.0..10.0).contains(&snr), "predicted {snr} dB");
        assert_relative_eq!(
            mean_count_rate(&s, &p),
            CALIBRATION_RATE,
            max_relative = 1e-12
        );
    }

    #[test]
    fn zero_rate_returns_empty_record() {
        let mut p = base_params(2);
        p.dt = 1.96e-8;
        p.duration = 0.05;
        let mut s = sys();
        s.excitation = Excitation::new(0.0).unwrap();
        let out = simulate_run(&s, &p, None).unwrap();
        assert!(out.photons.event_times.is_empty());
    }

    #[test]
    fn params_validation_rejects_bad_dt() {
        let s = sys();
        let mut p = base_params(1);
        p.dt = 1e-6; // far too coarse for a 1 MHz oscillation
        assert!(p.validate(&s).is_err());
    }

    #[test]
    fn locked_run_rate_is_stationary() {
        let s = sys();
        let mut p = base_params(31);
        p.dt = 1.96e-8;
        p.duration = 6.0;
        p.warmup = 0.75;
        let r0 = mean_count_rate(&s, &p);
        let slope = r0 * p.detection_contrast * p.smear_factor(&s) * 2.0 * s.ion.wavenumber();
        let cfg = ServoConfig {
            gain: ServoConfig::gain_for_slope(0.15, slope),
            sign: 1.0,
            setpoint: r0,
            integration_time: 0.15,
            smoothing_window: 0.05,
            actuator_range: 2e-6,
            update_period: 0.01,
        };
        let drift = DriftModel {
            ramp: 20e-9,
            ..Default::default()
        };
        let out = simulate_run(&s, &p, Some((&cfg, &drift))).unwrap();
        assert!(!out.lost_lock);
        let half = p.duration / 2.0;
        let first = out
            .photons
            .event_times
            .iter()
            .filter(|&&t| t < half)
            .count() as f64
            / half;
        let second = out
            .photons
            .event_times
            .iter()
            .filter(|&&t| t >= half)
            .count() as f64
            / half;
        // mean-rate drift under lock stays at the percent level
        assert!(
            (first - second).abs() / r0 < 0.015,
            "first {first}, second {second}"
        );
    }
}
