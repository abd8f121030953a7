//! Physical constants and boundary unit conversions.
//!
//! Everything internal is SI with angular frequencies in rad/s. Conversions
//! from convenience units (nm, MHz, amu, degrees, percent) happen exactly
//! once, at the configuration boundary.

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Atomic mass unit, kg.
pub const AMU: f64 = 1.660_539_066_60e-27;

/// Standard gravity, m/s^2.
pub const G0: f64 = 9.806_65;

/// Mass of 138Ba in atomic mass units.
pub const BA138_MASS_AMU: f64 = 137.905_247_2;

pub fn amu_to_kg(m: f64) -> f64 {
    m * AMU
}

pub fn nm_to_m(x: f64) -> f64 {
    x * 1e-9
}

pub fn m_to_nm(x: f64) -> f64 {
    x * 1e9
}

/// Cyclic frequency in MHz to angular frequency in rad/s.
pub fn mhz_to_angular(f: f64) -> f64 {
    f * 1e6 * core::f64::consts::TAU
}

/// Cyclic frequency in Hz to angular frequency in rad/s.
pub fn hz_to_angular(f: f64) -> f64 {
    f * core::f64::consts::TAU
}

/// Angular frequency in rad/s to cyclic frequency in Hz.
pub fn angular_to_hz(w: f64) -> f64 {
    w / core::f64::consts::TAU
}

pub fn percent_to_fraction(p: f64) -> f64 {
    p / 100.0
}

pub fn deg_to_rad(d: f64) -> f64 {
    d.to_radians()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angular_round_trip() {
        let f = 1.02e6;
        assert!((angular_to_hz(hz_to_angular(f)) - f).abs() < 1e-6);
    }

    #[test]
    fn barium_mass_kg() {
        let m = amu_to_kg(BA138_MASS_AMU);
        assert!((m - 2.2899e-25).abs() / m < 1e-3);
    }
}
