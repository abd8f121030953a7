//! Desk-scale digital twin of a single trapped ion interacting with its
//! distant mirror image.
//!
//! The crate is organized along the measurement chain of the real apparatus:
//!
//! * [`model`] — closed-form mirror potential, forces, and trap-frequency
//!   shifts (generic over the scalar type).
//! * [`dynamics`] — stochastic 1-D Langevin motion of the laser-cooled ion
//!   plus the detected photon event stream.
//! * [`servo`] — the fringe-lock feedback loop holding the ion-mirror phase.
//! * [`spectral`] — Welch power spectra of the count signal and Lorentzian
//!   sideband fits.
//! * [`protocol`] — the three published measurement protocols
//!   (alternating-slope, excitation scan, spatial scan), persistence, and the
//!   CLI plumbing.

pub mod config;
pub mod dynamics;
pub mod error;
pub(crate) mod fit;
pub mod float;
pub mod io;
pub mod model;
pub mod protocol;
pub mod servo;
pub mod spectral;
pub mod stats;
pub mod units;

pub use error::{Error, Result};

/// Concrete f64 aliases for the generic model layer.
pub type IonSpecies = model::IonSpecies<f64>;
pub type MirrorCoupling = model::MirrorCoupling<f64>;
pub type TrapConfig = model::TrapConfig<f64>;
pub type Excitation = model::Excitation<f64>;
pub type IonMirrorSystem = model::IonMirrorSystem<f64>;
