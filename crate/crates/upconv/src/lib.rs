//! Simulation and analysis toolkit for picosecond-resolution photon
//! correlation (g²) measurement by pulsed frequency upconversion.
//!
//! A short pump pulse gates an input signal through sum-frequency
//! generation in a periodically poled lithium niobate waveguide; the
//! upconverted photons are counted in a Hanbury Brown–Twiss setup and
//! the second-order correlation function is recovered from the
//! coincidence histogram. The crate covers the full chain:
//!
//! - [`dispersion`] — Sellmeier refractive index, group index, and
//!   quasi-phase-matching design of the waveguide (pump wavelength vs
//!   signal wavelength, SFG wavelength).
//! - [`propagation`] — split-step solver for the three-wave mixing of
//!   the sech² pump gate with the signal; produces the instrument
//!   response (the dip carved into the signal), its FWHM (the time
//!   resolution), SFG output, and the pump-power saturation curve.
//! - [`hbt`] — Monte Carlo simulation of the gated HBT measurement for
//!   several source models, plus the exact histogram normalization
//!   c(Δt) = C(Δt)/⟨C(Δt+nT)⟩ and g²(Δt) = 2c(Δt) − c(0) inversion.
//! - [`analysis`] — peak fitting, visibility extraction, resolution
//!   deconvolution, classical-inequality violation significance, and
//!   the detection-efficiency budget.
//! - [`experiment`] / [`csvio`] — JSON experiment files and the CSV
//!   formats consumed and produced by the `upconv` CLI.

pub mod analysis;
pub mod csvio;
pub mod dispersion;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod hbt;
pub mod propagation;

pub use error::{Error, Result};
