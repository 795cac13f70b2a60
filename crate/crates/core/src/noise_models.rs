//! Closed-form fundamental noise sources.
//!
//! Structural-damping thermal noise summed over mechanical modes, quantum
//! radiation-pressure noise of a detuned cavity referred to a free mass, the
//! optical-spring suppression of that noise below the spring frequency, the
//! shot-noise level of a photodetector and the free-mass standard quantum
//! limit. All spectra are one-sided; grids are in Hz and converted to rad/s
//! with an exact factor 2π.

use serde::{Deserialize, Serialize};

use crate::constants::{angular, BOLTZMANN, HBAR, PLANCK, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::spectrum::{validate_grid, Spectrum, Units};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanicalMode {
    /// Modal mass, kg.
    pub modal_mass: f64,
    /// Resonance angular frequency, rad/s.
    pub resonance_angular_freq: f64,
    /// Mode-specific loss angle; the mode set's loss angle applies when absent.
    pub loss_angle_override: Option<f64>,
}

impl MechanicalMode {
    pub fn new(modal_mass: f64, resonance_freq_hz: f64) -> Self {
        MechanicalMode {
            modal_mass,
            resonance_angular_freq: angular(resonance_freq_hz),
            loss_angle_override: None,
        }
    }

    pub fn with_loss_angle(mut self, phi: f64) -> Self {
        self.loss_angle_override = Some(phi);
        self
    }

    pub fn resonance_freq_hz(&self) -> f64 {
        self.resonance_angular_freq / crate::constants::TWO_PI
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.modal_mass > 0.0 && self.modal_mass.is_finite()) {
            return Err(Error::invalid(format!(
                "modal mass must be > 0, got {}",
                self.modal_mass
            )));
        }
        if !(self.resonance_angular_freq > 0.0 && self.resonance_angular_freq.is_finite()) {
            return Err(Error::invalid(format!(
                "resonance frequency must be > 0, got {} rad/s",
                self.resonance_angular_freq
            )));
        }
        if let Some(phi) = self.loss_angle_override {
            if !(phi > 0.0 && phi < 1.0) {
                return Err(Error::invalid(format!(
                    "loss angle override must lie in (0, 1), got {phi}"
                )));
            }
        }
        Ok(())
    }
}

/// The mechanical oscillator: its modes, shared loss angle `phi = 1/Q` and
/// temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub modes: Vec<MechanicalMode>,
    pub loss_angle: f64,
    /// Kelvin.
    pub temperature: f64,
}

impl ModeSet {
    pub fn new(modes: Vec<MechanicalMode>, loss_angle: f64, temperature: f64) -> Result<Self> {
        let set = ModeSet {
            modes,
            loss_angle,
            temperature,
        };
        set.validate()?;
        Ok(set)
    }

    /// A one-mode set, handy for resonance checks.
    pub fn single(modal_mass: f64, freq_hz: f64, q: f64, temperature: f64) -> Result<Self> {
        ModeSet::new(vec![MechanicalMode::new(modal_mass, freq_hz)], 1.0 / q, temperature)
    }

    pub fn quality_factor(&self) -> f64 {
        1.0 / self.loss_angle
    }

    pub fn mode_loss_angle(&self, k: usize) -> f64 {
        self.modes[k].loss_angle_override.unwrap_or(self.loss_angle)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::invalid("mode set needs at least one mode"));
        }
        for m in &self.modes {
            m.validate()?;
        }
        if let Some(w) = self
            .modes
            .windows(2)
            .find(|w| w[1].resonance_angular_freq <= w[0].resonance_angular_freq)
        {
            return Err(Error::invalid(format!(
                "mode frequencies must be strictly increasing ({} Hz then {} Hz)",
                w[0].resonance_freq_hz(),
                w[1].resonance_freq_hz()
            )));
        }
        if !(self.loss_angle > 0.0 && self.loss_angle < 1.0) {
            return Err(Error::invalid(format!(
                "loss angle must lie in (0, 1), got {}",
                self.loss_angle
            )));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::invalid(format!(
                "temperature must be >= 0 K, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Copy with every modal mass multiplied by `factor`.
    pub fn scale_masses(&self, factor: f64) -> ModeSet {
        let mut out = self.clone();
        for m in &mut out.modes {
            m.modal_mass *= factor;
        }
        out
    }
}

/// Displacement PSD of one structurally damped mode at angular frequency `w`.
pub fn mode_thermal_psd(modal_mass: f64, mode_angular_freq: f64, loss_angle: f64, temperature: f64, w: f64) -> f64 {
    let wk2 = mode_angular_freq * mode_angular_freq;
    let detune = wk2 - w * w;
    let denom = modal_mass * (detune * detune + w * w * wk2 * loss_angle * loss_angle);
    4.0 * BOLTZMANN * temperature * mode_angular_freq * loss_angle / denom
}

/// Multimode structural-damping thermal displacement PSD, m²/Hz.
pub fn thermal_psd(modeset: &ModeSet, freq_grid: &[f64]) -> Result<Spectrum> {
    validate_grid(freq_grid)?;
    modeset.validate()?;
    let values = freq_grid
        .iter()
        .map(|&f| {
            let w = angular(f);
            let mut total = 0.0;
            for (k, mode) in modeset.modes.iter().enumerate() {
                total += mode_thermal_psd(
                    mode.modal_mass,
                    mode.resonance_angular_freq,
                    modeset.mode_loss_angle(k),
                    modeset.temperature,
                    w,
                );
            }
            total
        })
        .collect();
    Spectrum::new(freq_grid.to_vec(), values, Units::M2PerHz)
}

/// Free-mass standard quantum limit `2ħ/(m ω²)`, m²/Hz.
pub fn sql_psd(reduced_mass: f64, freq_grid: &[f64]) -> Result<Spectrum> {
    if !(reduced_mass > 0.0) {
        return Err(Error::invalid(format!("reduced mass must be > 0, got {reduced_mass}")));
    }
    validate_grid(freq_grid)?;
    let values = freq_grid
        .iter()
        .map(|&f| {
            let w = angular(f);
            2.0 * HBAR / (reduced_mass * w * w)
        })
        .collect();
    Spectrum::new(freq_grid.to_vec(), values, Units::M2PerHz)
}

/// Circulating power of a cavity detuned by `detuning` linewidths:
/// `P0 / (1 + δ²)`.
pub fn circulating_power(p0: f64, detuning: f64) -> Result<f64> {
    if !(p0 >= 0.0) {
        return Err(Error::invalid(format!(
            "maximum circulating power must be >= 0, got {p0}"
        )));
    }
    Ok(p0 / (1.0 + detuning * detuning))
}

/// Laser and cavity parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalConfig {
    /// m
    pub wavelength: f64,
    /// Power incident on the cavity, W.
    pub input_power: f64,
    /// On-resonance circulating power `P0`, W.
    pub max_circulating_power: f64,
    /// Cavity detuning in linewidths; negative is the blue-detuned spring side.
    pub detuning: f64,
    /// kg
    pub reduced_mass: f64,
    /// m
    pub cavity_length: f64,
    /// Input-mirror power transmission; when set, `P0 = 4 P_in / T`.
    pub input_transmission: Option<f64>,
}

impl OpticalConfig {
    /// Builds a config whose `P0` follows from the input-mirror transmission.
    pub fn from_transmission(
        wavelength: f64,
        input_power: f64,
        input_transmission: f64,
        detuning: f64,
        reduced_mass: f64,
        cavity_length: f64,
    ) -> Result<Self> {
        if !(input_transmission > 0.0 && input_transmission <= 1.0) {
            return Err(Error::invalid(format!(
                "input transmission must lie in (0, 1], got {input_transmission}"
            )));
        }
        let cfg = OpticalConfig {
            wavelength,
            input_power,
            max_circulating_power: 4.0 * input_power / input_transmission,
            detuning,
            reduced_mass,
            cavity_length,
            input_transmission: Some(input_transmission),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0) {
            return Err(Error::invalid("wavelength must be > 0"));
        }
        if !(self.input_power >= 0.0) || !(self.max_circulating_power >= 0.0) {
            return Err(Error::invalid("optical powers must be >= 0"));
        }
        if !(self.reduced_mass > 0.0) {
            return Err(Error::invalid("reduced mass must be > 0"));
        }
        if !self.detuning.is_finite() {
            return Err(Error::invalid("detuning must be finite"));
        }
        if let Some(t) = self.input_transmission {
            let expected = 4.0 * self.input_power / t;
            let rel = (self.max_circulating_power - expected).abs() / expected.abs().max(1e-300);
            if rel > 1e-9 {
                return Err(Error::invalid(format!(
                    "P0 = {} W disagrees with 4·P_in/T = {expected} W",
                    self.max_circulating_power
                )));
            }
        }
        Ok(())
    }

    /// Optical carrier frequency, Hz.
    pub fn optical_frequency(&self) -> f64 {
        SPEED_OF_LIGHT / self.wavelength
    }

    pub fn circulating_power(&self) -> f64 {
        self.max_circulating_power / (1.0 + self.detuning * self.detuning)
    }
}

/// Amplitude spectral density of the uncancelled radiation-pressure noise
/// referred to a free mass, m/√Hz:
/// `(1/(m ω²)) · (2 P_c / c) · sqrt(2 h ν / P_in)`.
pub fn qrpn_asd_free_mass(optical: &OpticalConfig, freq_grid: &[f64]) -> Result<Spectrum> {
    optical.validate()?;
    if !(optical.input_power > 0.0) {
        return Err(Error::invalid("input power must be > 0 for radiation-pressure noise"));
    }
    validate_grid(freq_grid)?;
    let force_asd = 2.0 * optical.circulating_power() / SPEED_OF_LIGHT
        * (2.0 * PLANCK * optical.optical_frequency() / optical.input_power).sqrt();
    let m = optical.reduced_mass;
    let values = freq_grid
        .iter()
        .map(|&f| {
            let w = angular(f);
            force_asd / (m * w * w)
        })
        .collect();
    Spectrum::new(freq_grid.to_vec(), values, Units::MPerRootHz)
}

/// Radiation-pressure displacement PSD (square of [`qrpn_asd_free_mass`]).
pub fn qrpn_psd_free_mass(optical: &OpticalConfig, freq_grid: &[f64]) -> Result<Spectrum> {
    let asd = qrpn_asd_free_mass(optical, freq_grid)?;
    Ok(asd.map_values(Units::M2PerHz, |_, a| a * a))
}

/// Amplitude suppression of radiation-pressure noise by the optical spring:
/// `ω/ω_os` below the spring frequency, 1 at and above it.
pub fn qrpn_suppression_factor(freq: f64, os_freq: f64) -> f64 {
    assert!(os_freq > 0.0, "optical spring frequency must be > 0");
    (freq / os_freq).min(1.0)
}

/// Relative power noise of shot noise on a detector, `2 h ν / P`, 1/Hz.
pub fn shot_noise_rpn_psd(detected_power: f64, wavelength: f64) -> Result<f64> {
    if !(detected_power > 0.0) {
        return Err(Error::invalid(format!(
            "detected power must be > 0, got {detected_power}"
        )));
    }
    if !(wavelength > 0.0) {
        return Err(Error::invalid("wavelength must be > 0"));
    }
    Ok(2.0 * PLANCK * (SPEED_OF_LIGHT / wavelength) / detected_power)
}
