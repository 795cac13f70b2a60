//! Physical constants, CODATA 2018 exact or recommended values.

/// Boltzmann constant, J/K (exact).
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Planck constant, J·s (exact).
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Angular frequency for a frequency in Hz.
#[inline]
pub fn angular(freq_hz: f64) -> f64 {
    TWO_PI * freq_hz
}

pub const PI: f64 = std::f64::consts::PI;
