//! Closed-form quantities for a trapped ion coupled to its retro-reflected
//! fluorescence field.
//!
//! The mirror shifts the excited level by `U(z) = -hbar eps Gamma/2 sin(2kz)`
//! and modulates the decay rate as `Gamma (1 - eps cos(2kz))`. Everything in
//! this module is a pure function of an immutable [`IonMirrorSystem`]; the
//! stochastic modules use these functions both as driving terms and as
//! oracles.

use crate::error::{Error, Result};
use crate::float::Real;
use crate::units::HBAR;

use serde::Serialize;

/// Validation warnings for parameter sets that are legal but strain the
/// small-shift approximation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ModelWarning {
    /// omega_vac exceeds omega_trap / 10; the linearized shift formula
    /// starts to deviate from the exact square-root form.
    VacuumFrequencyLarge { omega_vac: f64, omega_trap: f64 },
}

/// Ion species: mass, decay rate, transition wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonSpecies<R> {
    mass: R,
    decay_rate: R,
    wavelength: R,
}

impl<R: Real> IonSpecies<R> {
    pub fn new(mass: R, decay_rate: R, wavelength: R) -> Result<Self> {
        if !(mass > R::zero()) {
            return Err(Error::InvalidParameter {
                name: "mass",
                reason: "must be > 0".into(),
            });
        }
        if !(decay_rate > R::zero()) {
            return Err(Error::InvalidParameter {
                name: "decay_rate",
                reason: "must be > 0".into(),
            });
        }
        if !(wavelength > R::zero()) {
            return Err(Error::InvalidParameter {
                name: "wavelength",
                reason: "must be > 0".into(),
            });
        }
        Ok(Self {
            mass,
            decay_rate,
            wavelength,
        })
    }

    /// 138Ba+ on the 493 nm transition, Gamma = 2 pi x 15.4 MHz.
    pub fn barium_138() -> Self {
        Self {
            mass: R::c(crate::units::BA138_MASS_AMU * crate::units::AMU),
            decay_rate: R::c(crate::units::mhz_to_angular(15.4)),
            wavelength: R::c(493e-9),
        }
    }

    pub fn mass(&self) -> R {
        self.mass
    }

    /// Gamma, rad/s.
    pub fn decay_rate(&self) -> R {
        self.decay_rate
    }

    pub fn wavelength(&self) -> R {
        self.wavelength
    }

    /// k = 2 pi / lambda, 1/m.
    pub fn wavenumber(&self) -> R {
        R::TAU() / self.wavelength
    }

    /// Photon recoil frequency hbar k^2 / (2 m), in Hz (cyclic).
    pub fn recoil_frequency(&self) -> R {
        let k = self.wavenumber();
        R::c(HBAR) * k * k / (R::c(2.0) * self.mass) / R::TAU()
    }
}

/// Fraction of fluorescence retro-reflected onto the ion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorCoupling<R> {
    epsilon: R,
    nominal_distance: R,
}

impl<R: Real> MirrorCoupling<R> {
    pub fn new(epsilon: R, nominal_distance: R) -> Result<Self> {
        if !(epsilon >= R::zero() && epsilon <= R::one()) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                reason: "must be in [0, 1]".into(),
            });
        }
        Ok(Self {
            epsilon,
            nominal_distance,
        })
    }

    pub fn epsilon(&self) -> R {
        self.epsilon
    }

    /// Ion-mirror distance, metadata only (default 0.25 m).
    pub fn nominal_distance(&self) -> R {
        self.nominal_distance
    }
}

/// Harmonic trap: mode frequency and its angle to the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapConfig<R> {
    omega_trap: R,
    mode_angle: R,
}

impl<R: Real> TrapConfig<R> {
    pub fn new(omega_trap: R, mode_angle: R) -> Result<Self> {
        if !(omega_trap > R::zero()) {
            return Err(Error::InvalidParameter {
                name: "omega_trap",
                reason: "must be > 0".into(),
            });
        }
        if !(mode_angle >= R::zero() && mode_angle < R::FRAC_PI_2()) {
            return Err(Error::InvalidParameter {
                name: "mode_angle",
                reason: "must be in [0, pi/2)".into(),
            });
        }
        Ok(Self {
            omega_trap,
            mode_angle,
        })
    }

    /// rad/s.
    pub fn omega_trap(&self) -> R {
        self.omega_trap
    }

    pub fn mode_angle(&self) -> R {
        self.mode_angle
    }

    /// cos(mode_angle): projection of the mode coordinate onto the optical axis.
    pub fn projection(&self) -> R {
        self.mode_angle.cos()
    }
}

/// Steady-state excited-state population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Excitation<R> {
    p_e: R,
}

impl<R: Real> Excitation<R> {
    pub fn new(p_e: R) -> Result<Self> {
        if !(p_e >= R::zero() && p_e <= R::one()) {
            return Err(Error::InvalidParameter {
                name: "p_e",
                reason: "must be in [0, 1]".into(),
            });
        }
        Ok(Self { p_e })
    }

    /// Two-level steady state from saturation parameter and detuning.
    pub fn from_saturation(s: R, detuning: R, decay_rate: R) -> Result<Self> {
        if !(s >= R::zero()) {
            return Err(Error::InvalidParameter {
                name: "saturation",
                reason: "must be >= 0".into(),
            });
        }
        Ok(Self {
            p_e: excited_population(s, detuning, decay_rate),
        })
    }

    pub fn p_e(&self) -> R {
        self.p_e
    }
}

/// Two-level steady-state excited population (s/2) / (1 + s + (2 delta / Gamma)^2).
pub fn excited_population<R: Real>(s: R, detuning: R, decay_rate: R) -> R {
    let d = R::c(2.0) * detuning / decay_rate;
    s / R::c(2.0) / (R::one() + s + d * d)
}

/// Full parameter set of the ion-mirror system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonMirrorSystem<R> {
    pub ion: IonSpecies<R>,
    pub mirror: MirrorCoupling<R>,
    pub trap: TrapConfig<R>,
    pub excitation: Excitation<R>,
}

impl<R: Real> IonMirrorSystem<R> {
    pub fn new(
        ion: IonSpecies<R>,
        mirror: MirrorCoupling<R>,
        trap: TrapConfig<R>,
        excitation: Excitation<R>,
    ) -> Self {
        Self {
            ion,
            mirror,
            trap,
            excitation,
        }
    }

    /// Typical published operating point: 138Ba+, eps = 1.5%, P_e = 7%,
    /// omega_trap = 2 pi x 1.02 MHz at 54 degrees to the optical axis.
    pub fn typical() -> Self {
        Self {
            ion: IonSpecies::barium_138(),
            mirror: MirrorCoupling::new(R::c(0.015), R::c(0.25)).unwrap(),
            trap: TrapConfig::new(
                R::c(crate::units::mhz_to_angular(1.02)),
                R::c(54.0f64.to_radians()),
            )
            .unwrap(),
            excitation: Excitation::new(R::c(0.07)).unwrap(),
        }
    }

    /// Non-fatal validity diagnostics.
    pub fn warnings(&self) -> Vec<ModelWarning> {
        let mut w = Vec::new();
        let wv = self.vacuum_frequency().to_f64().unwrap();
        let wt = self.trap.omega_trap().to_f64().unwrap();
        if wv > wt / 10.0 {
            w.push(ModelWarning::VacuumFrequencyLarge {
                omega_vac: wv,
                omega_trap: wt,
            });
        }
        w
    }

    /// Mirror-induced excited-level shift U(z) = -hbar eps Gamma/2 sin(2kz), J.
    /// Periodic in z with period lambda/2.
    pub fn mirror_potential(&self, z: R) -> R {
        let k = self.ion.wavenumber();
        -R::c(HBAR) * self.mirror.epsilon() * self.ion.decay_rate() / R::c(2.0)
            * (R::c(2.0) * k * z).sin()
    }

    /// Mean force on the ion, -P_e dU/dz = P_e hbar k eps Gamma cos(2kz), N.
    pub fn mirror_force(&self, z: R) -> R {
        let k = self.ion.wavenumber();
        self.excitation.p_e()
            * R::c(HBAR)
            * k
            * self.mirror.epsilon()
            * self.ion.decay_rate()
            * (R::c(2.0) * k * z).cos()
    }

    /// omega_vac = sqrt(2 P_e eps Gamma hbar k^2 / m): oscillation frequency of
    /// an otherwise free atom in a mirror-potential well, rad/s.
    pub fn vacuum_frequency(&self) -> R {
        let k = self.ion.wavenumber();
        (R::c(2.0)
            * self.excitation.p_e()
            * self.mirror.epsilon()
            * self.ion.decay_rate()
            * R::c(HBAR)
            * k
            * k
            / self.ion.mass())
        .sqrt()
    }

    /// Exact modified trap frequency sqrt(omega_trap^2 + omega_vac^2 sin(2kz)), rad/s.
    pub fn modified_trap_frequency(&self, z: R) -> Result<R> {
        let wt = self.trap.omega_trap();
        let wv = self.vacuum_frequency();
        let k = self.ion.wavenumber();
        let arg = wt * wt + wv * wv * (R::c(2.0) * k * z).sin();
        if !(arg > R::zero()) {
            return Err(Error::ImaginaryFrequency {
                z: z.to_f64().unwrap(),
            });
        }
        Ok(arg.sqrt())
    }

    /// Linearized trap-frequency shift
    /// delta omega = (P_e eps Gamma hbar k^2 / (m omega_trap)) sin(2kz), rad/s.
    /// Positive on the positive fringe slope.
    pub fn trap_frequency_shift(&self, z: R) -> R {
        let k = self.ion.wavenumber();
        self.shift_coefficient() * (R::c(2.0) * k * z).sin()
    }

    /// Amplitude of the linearized shift, omega_vac^2 / (2 omega_trap), rad/s.
    pub fn shift_coefficient(&self) -> R {
        let wv = self.vacuum_frequency();
        wv * wv / (R::c(2.0) * self.trap.omega_trap())
    }

    /// Mirror-modified decay rate Gamma (1 - eps cos(2kz)), rad/s. The detected
    /// fringe signal follows -cos(2kz); slope midpoints sit at sin(2kz) = +-1.
    pub fn modified_decay_rate(&self, z: R) -> R {
        let k = self.ion.wavenumber();
        self.ion.decay_rate()
            * (R::one() - self.mirror.epsilon() * (R::c(2.0) * k * z).cos())
    }

    /// Peak acceleration P_e hbar k eps Gamma / m, m/s^2.
    pub fn max_acceleration(&self) -> R {
        self.excitation.p_e() * R::c(HBAR) * self.ion.wavenumber() * self.mirror.epsilon()
            * self.ion.decay_rate()
            / self.ion.mass()
    }

    /// Position of the nearest midpoint of the requested fringe slope:
    /// sin(2kz) = +1 (positive slope) or -1 (negative slope), in [0, lambda/2).
    pub fn slope_midpoint(&self, positive: bool) -> R {
        let k = self.ion.wavenumber();
        // 2kz = pi/2 or 3 pi/2
        let phase = if positive {
            R::FRAC_PI_2()
        } else {
            R::c(3.0) * R::FRAC_PI_2()
        };
        phase / (R::c(2.0) * k)
    }
}

/// All scalar predictions for one parameter set, in reporting units.
#[derive(Debug, Clone, Serialize)]
pub struct Predictions {
    /// U amplitude, J.
    pub potential_amplitude_j: f64,
    /// U amplitude expressed as a level shift, Hz (cyclic).
    pub level_shift_hz: f64,
    /// Peak force P_e hbar k eps Gamma, N.
    pub max_force_n: f64,
    /// omega_vac / 2 pi, Hz.
    pub vacuum_frequency_hz: f64,
    /// Linearized shift amplitude delta f at sin(2kz) = +1, Hz.
    pub shift_amplitude_hz: f64,
    /// Slope-to-slope (peak-to-peak) shift 2 delta f, Hz.
    pub shift_peak_to_peak_hz: f64,
    /// Photon recoil frequency, Hz.
    pub recoil_frequency_hz: f64,
    /// P_e hbar k eps Gamma / m, m/s^2.
    pub max_acceleration_mps2: f64,
    /// Same in units of standard gravity.
    pub max_acceleration_g: f64,
    /// Trap frequency, Hz.
    pub trap_frequency_hz: f64,
    /// Fringe period in mirror displacement, m (lambda/2).
    pub fringe_period_m: f64,
    pub warnings: Vec<ModelWarning>,
}

impl Predictions {
    pub fn for_system(sys: &IonMirrorSystem<f64>) -> Self {
        use crate::units::{angular_to_hz, G0, PLANCK};
        let u_amp = (HBAR * sys.mirror.epsilon() * sys.ion.decay_rate() / 2.0).abs();
        let df = angular_to_hz(sys.shift_coefficient());
        let a = sys.max_acceleration();
        Predictions {
            potential_amplitude_j: u_amp,
            level_shift_hz: u_amp / PLANCK,
            max_force_n: sys.excitation.p_e()
                * HBAR
                * sys.ion.wavenumber()
                * sys.mirror.epsilon()
                * sys.ion.decay_rate(),
            vacuum_frequency_hz: angular_to_hz(sys.vacuum_frequency()),
            shift_amplitude_hz: df,
            shift_peak_to_peak_hz: 2.0 * df,
            recoil_frequency_hz: sys.ion.recoil_frequency(),
            max_acceleration_mps2: a,
            max_acceleration_g: a / G0,
            trap_frequency_hz: angular_to_hz(sys.trap.omega_trap()),
            fringe_period_m: sys.ion.wavelength() / 2.0,
            warnings: sys.warnings(),
        }
    }
}
