//! TOML run configuration.
//!
//! Sections mirror the module layout; every physical key carries its unit in
//! the name (`wavelength_nm`, `frequency_mhz`). All keys are optional and
//! default to the typical apparatus values, so an empty file is a valid
//! configuration. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, InitialState, SimParams};
use crate::error::{Error, Result};
use crate::model::IonMirrorSystem;
use crate::servo::{DriftModel, ServoConfig};
use crate::units;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub ion: IonSection,
    pub mirror: MirrorSection,
    pub trap: TrapSection,
    pub excitation: ExcitationSection,
    pub sim: SimSection,
    pub servo: ServoSection,
    pub drift: DriftSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IonSection {
    pub mass_amu: f64,
    pub decay_rate_mhz: f64,
    pub wavelength_nm: f64,
}

impl Default for IonSection {
    fn default() -> Self {
        Self {
            mass_amu: units::BA138_MASS_AMU,
            decay_rate_mhz: 15.4,
            wavelength_nm: 493.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MirrorSection {
    pub epsilon_percent: f64,
    pub nominal_distance_m: f64,
}

impl Default for MirrorSection {
    fn default() -> Self {
        Self {
            epsilon_percent: 1.5,
            nominal_distance_m: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapSection {
    pub frequency_mhz: f64,
    pub mode_angle_deg: f64,
}

impl Default for TrapSection {
    fn default() -> Self {
        Self {
            frequency_mhz: 1.02,
            mode_angle_deg: 54.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationSection {
    /// Excited-state population. Ignored when `saturation` is set.
    pub p_e: f64,
    /// Optional saturation parameter; with `detuning_mhz` it overrides `p_e`.
    pub saturation: Option<f64>,
    /// Laser detuning, MHz (used with `saturation`).
    pub detuning_mhz: Option<f64>,
}

impl Default for ExcitationSection {
    fn default() -> Self {
        Self {
            p_e: 0.07,
            saturation: None,
            detuning_mhz: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Integrator step as a fraction of the trap period.
    pub steps_per_trap_period: f64,
    pub duration_s: f64,
    pub warmup_s: f64,
    /// Target width of the motional sideband; sets the cooling rate.
    pub sideband_fwhm_hz: f64,
    /// Target fringe modulation index 2 k cos(angle) q_rms; sets the
    /// diffusion and hence the thermal excursion.
    pub modulation_index: f64,
    /// Fringe contrast of the detected count signal.
    pub detection_contrast: f64,
    /// Mean rate at the P_e = 0.1 calibration point, counts/s.
    pub calibration_rate_cps: f64,
    pub bin_width_s: f64,
    pub record_stride: usize,
    /// Also scale the closed-form model predictions by the mode projection
    /// when comparing against simulation output.
    pub apply_projection_to_model: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            steps_per_trap_period: 51.0,
            duration_s: 5.0,
            warmup_s: 0.0,
            sideband_fwhm_hz: 500.0,
            modulation_index: dynamics::DEFAULT_MODULATION_INDEX,
            detection_contrast: dynamics::DEFAULT_DETECTION_CONTRAST,
            calibration_rate_cps: dynamics::CALIBRATION_RATE,
            bin_width_s: 1e-7,
            record_stride: 0,
            apply_projection_to_model: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServoSection {
    pub integration_time_s: f64,
    pub smoothing_window_s: f64,
    pub actuator_range_um: f64,
    pub update_period_s: f64,
}

impl Default for ServoSection {
    fn default() -> Self {
        Self {
            integration_time_s: 0.15,
            smoothing_window_s: 0.05,
            actuator_range_um: 2.0,
            update_period_s: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSection {
    pub ramp_nm_per_s: f64,
    pub sine_amplitude_nm: f64,
    pub sine_frequency_hz: f64,
    pub walk_intensity_nm: f64,
}

impl Default for DriftSection {
    fn default() -> Self {
        Self {
            ramp_nm_per_s: 10.0,
            sine_amplitude_nm: 0.0,
            sine_frequency_hz: 0.0,
            walk_intensity_nm: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub n_spectra: usize,
    pub spectrum_duration_s: f64,
    /// Linear trap-frequency drift injected across records, Hz per record.
    pub frequency_drift_hz_per_record: f64,
    /// P_e values for the excitation scan.
    pub pe_scan_points: Vec<f64>,
    /// Setpoint offsets (fraction of the fringe swing, in (-1, 1)) for the
    /// spatial scan.
    pub spatial_scan_points: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            n_spectra: 60,
            spectrum_duration_s: 5.0,
            frequency_drift_hz_per_record: 0.0,
            pe_scan_points: vec![0.02, 0.04, 0.06, 0.08, 0.10],
            spatial_scan_points: (0..12).map(|i| -0.88 + 0.16 * i as f64).collect(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, reason: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config {
                    key: key.into(),
                    reason: reason.into(),
                })
            }
        };
        check(self.ion.mass_amu > 0.0, "ion.mass_amu", "must be > 0")?;
        check(
            self.ion.decay_rate_mhz > 0.0,
            "ion.decay_rate_mhz",
            "must be > 0",
        )?;
        check(
            self.ion.wavelength_nm > 0.0,
            "ion.wavelength_nm",
            "must be > 0",
        )?;
        check(
            (0.0..=100.0).contains(&self.mirror.epsilon_percent),
            "mirror.epsilon_percent",
            "must be in [0, 100]",
        )?;
        check(
            self.trap.frequency_mhz > 0.0,
            "trap.frequency_mhz",
            "must be > 0",
        )?;
        check(
            (0.0..90.0).contains(&self.trap.mode_angle_deg),
            "trap.mode_angle_deg",
            "must be in [0, 90)",
        )?;
        check(
            (0.0..=0.5).contains(&self.excitation.p_e),
            "excitation.p_e",
            "must be in [0, 0.5]",
        )?;
        if self.excitation.saturation.is_some() != self.excitation.detuning_mhz.is_some() {
            return Err(Error::Config {
                key: "excitation.saturation".into(),
                reason: "saturation and detuning_mhz must be set together".into(),
            });
        }
        check(
            self.sim.steps_per_trap_period >= 50.0,
            "sim.steps_per_trap_period",
            "must be >= 50",
        )?;
        check(self.sim.duration_s > 0.0, "sim.duration_s", "must be > 0")?;
        check(
            self.sim.sideband_fwhm_hz > 0.0,
            "sim.sideband_fwhm_hz",
            "must be > 0",
        )?;
        check(
            self.sim.modulation_index > 0.0,
            "sim.modulation_index",
            "must be > 0",
        )?;
        check(
            (0.0..=1.0).contains(&self.sim.detection_contrast),
            "sim.detection_contrast",
            "must be in [0, 1]",
        )?;
        check(
            self.sim.calibration_rate_cps > 0.0,
            "sim.calibration_rate_cps",
            "must be > 0",
        )?;
        check(
            self.servo.integration_time_s > 0.0,
            "servo.integration_time_s",
            "must be > 0",
        )?;
        check(
            self.servo.update_period_s > 0.0
                && self.servo.update_period_s <= self.servo.integration_time_s / 10.0,
            "servo.update_period_s",
            "must be > 0 and <= integration_time_s / 10",
        )?;
        check(
            self.experiment.n_spectra >= 4,
            "experiment.n_spectra",
            "must be >= 4",
        )?;
        check(
            self.experiment.spectrum_duration_s > 0.0,
            "experiment.spectrum_duration_s",
            "must be > 0",
        )?;
        for (i, &p) in self.experiment.pe_scan_points.iter().enumerate() {
            if !(p > 0.0 && p <= 0.5) {
                return Err(Error::Config {
                    key: format!("experiment.pe_scan_points[{i}]"),
                    reason: "P_e must be in (0, 0.5]".into(),
                });
            }
        }
        for (i, &x) in self.experiment.spatial_scan_points.iter().enumerate() {
            if !(-1.0 < x && x < 1.0) {
                return Err(Error::Config {
                    key: format!("experiment.spatial_scan_points[{i}]"),
                    reason: "setpoint offset must be in (-1, 1)".into(),
                });
            }
        }
        Ok(())
    }

    pub fn system(&self) -> Result<IonMirrorSystem<f64>> {
        let ion = crate::model::IonSpecies::new(
            units::amu_to_kg(self.ion.mass_amu),
            units::mhz_to_angular(self.ion.decay_rate_mhz),
            units::nm_to_m(self.ion.wavelength_nm),
        )?;
        let mirror = crate::model::MirrorCoupling::new(
            units::percent_to_fraction(self.mirror.epsilon_percent),
            self.mirror.nominal_distance_m,
        )?;
        let trap = crate::model::TrapConfig::new(
            units::mhz_to_angular(self.trap.frequency_mhz),
            units::deg_to_rad(self.trap.mode_angle_deg),
        )?;
        let excitation = match (self.excitation.saturation, self.excitation.detuning_mhz) {
            (Some(s), Some(det)) => crate::model::Excitation::from_saturation(
                s,
                units::mhz_to_angular(det),
                units::mhz_to_angular(self.ion.decay_rate_mhz),
            )?,
            _ => crate::model::Excitation::new(self.excitation.p_e)?,
        };
        Ok(IonMirrorSystem::new(ion, mirror, trap, excitation))
    }

    pub fn sim_params(&self, sys: &IonMirrorSystem<f64>, seed: u64) -> Result<SimParams> {
        let f_trap = sys.trap.omega_trap() / core::f64::consts::TAU;
        let projection = sys.trap.projection();
        let (cooling_rate, diffusion) = dynamics::calibrate_cooling(
            self.sim.sideband_fwhm_hz,
            sys,
            projection,
            self.sim.modulation_index,
        )?;
        let eta = self.sim.calibration_rate_cps
            / (dynamics::CALIBRATION_PE * sys.ion.decay_rate());
        let params = SimParams {
            dt: 1.0 / (self.sim.steps_per_trap_period * f_trap),
            duration: self.sim.duration_s,
            warmup: self.sim.warmup_s,
            seed,
            projection,
            cooling_rate,
            diffusion,
            detection_efficiency: eta,
            detection_contrast: self.sim.detection_contrast,
            bin_width: self.sim.bin_width_s,
            record_stride: self.sim.record_stride,
            mirror_offset: sys.slope_midpoint(true),
            apply_projection_to_model: self.sim.apply_projection_to_model,
            initial: InitialState::Thermal,
        };
        params.validate(sys)?;
        Ok(params)
    }

    /// Servo tuned to the smeared fringe slope at the lock point.
    pub fn servo_config(&self, sys: &IonMirrorSystem<f64>, params: &SimParams) -> ServoConfig {
        let r0 = dynamics::mean_count_rate(sys, params);
        let slope = r0
            * params.detection_contrast
            * params.smear_factor(sys)
            * 2.0
            * sys.ion.wavenumber();
        ServoConfig {
            gain: ServoConfig::gain_for_slope(self.servo.integration_time_s, slope),
            sign: 1.0,
            setpoint: r0,
            integration_time: self.servo.integration_time_s,
            smoothing_window: self.servo.smoothing_window_s,
            actuator_range: self.servo.actuator_range_um * 1e-6,
            update_period: self.servo.update_period_s,
        }
    }

    pub fn drift_model(&self) -> DriftModel {
        DriftModel {
            ramp: units::nm_to_m(self.drift.ramp_nm_per_s),
            sine_amplitude: units::nm_to_m(self.drift.sine_amplitude_nm),
            sine_frequency: self.drift.sine_frequency_hz,
            walk_intensity: units::nm_to_m(self.drift.walk_intensity_nm),
        }
    }
}
