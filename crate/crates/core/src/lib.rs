//! Noise budgets, synthetic detector data and cross-spectral calibration for
//! a detuned optical-spring Fabry–Pérot cavity.
//!
//! The crate is organised bottom-up:
//!
//! - [`noise_models`]: closed-form thermal, quantum radiation-pressure,
//!   shot-noise and standard-quantum-limit spectra.
//! - [`spring_loop`]: optical-spring gain and feedback-loop algebra.
//! - [`synth`]: seeded frequency-domain synthesis of the three photodetector
//!   channels (`PD_F`, `PD_L`, `PD_M`) with known injected truth.
//! - [`estimator`]: Welch PSD/CPSD, coherence, uncorrelated-noise estimates
//!   and ring-down fitting.
//! - [`pipeline`]: the calibration chain producing the cavity spectrum `S0`
//!   and the shot-noise-cancelled spectrum `S1`, SQL normalisation, model
//!   subtraction, run averaging, modal-mass fitting and noise budgets.
//! - [`presets`]: the bundled run configurations.
//! - [`io`]: configuration schema and the spectrum, dataset and report file
//!   formats.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod error;
pub mod estimator;
pub mod io;
pub mod noise_models;
pub mod pipeline;
pub mod presets;
pub mod spectrum;
pub mod spring_loop;
pub mod synth;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use spectrum::{CrossSpectrum, MaskFlags, Spectrum, Units};
