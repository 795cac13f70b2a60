//! Optical-spring gain and feedback-loop transfer functions.
//!
//! The optical spring turns the free test mass into a sprung oscillator at
//! `ω_os`. Its gain `G_os(ω) = ω² / (ω² − ω_os² − 2iζω_osω)` is the ratio of
//! sprung to free-mass displacement response for a common force. The
//! feedback open-loop gain `G_fb` acts on `PD_L` and enters the detected
//! signals through `1/(1 + G_fb)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::angular;
use crate::error::{Error, Result};
use crate::spectrum::{ensure_same_grid, validate_grid, CrossSpectrum, Spectrum, Units};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpringModel {
    /// Optical spring resonance, Hz.
    pub os_freq: f64,
    pub os_damping_ratio: f64,
}

impl SpringModel {
    pub fn new(os_freq: f64, os_damping_ratio: f64) -> Result<Self> {
        let s = SpringModel {
            os_freq,
            os_damping_ratio,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.os_freq > 0.0 && self.os_freq.is_finite()) {
            return Err(Error::invalid(format!(
                "optical spring frequency must be > 0, got {}",
                self.os_freq
            )));
        }
        if !(self.os_damping_ratio > 0.0 && self.os_damping_ratio <= 2.0) {
            return Err(Error::invalid(format!(
                "optical spring damping ratio must lie in (0, 2], got {}",
                self.os_damping_ratio
            )));
        }
        Ok(())
    }

    /// `G_os` at a single frequency (Hz).
    pub fn gain_at(&self, freq: f64) -> Complex64 {
        let w = angular(freq);
        let wos = angular(self.os_freq);
        let num = Complex64::new(w * w, 0.0);
        let den = Complex64::new(w * w - wos * wos, -2.0 * self.os_damping_ratio * wos * w);
        num / den
    }
}

/// Open-loop gain of the `PD_L` feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedbackGain {
    /// No feedback, `G_fb = 0`.
    Off,
    /// Frequency-independent complex gain.
    Constant { re: f64, im: f64 },
    /// Single integrator `G_fb = f_u / (i f)` with unity-gain frequency `f_u`.
    Integrator { unity_gain_hz: f64 },
    /// `gain · Π(1 + i f/z) / Π(1 + i f/p)` with real zeros and poles in Hz.
    ZeroPole {
        gain: f64,
        zeros_hz: Vec<f64>,
        poles_hz: Vec<f64>,
    },
    /// Tabulated response, linearly interpolated in real and imaginary parts.
    Tabulated {
        freq_hz: Vec<f64>,
        re: Vec<f64>,
        im: Vec<f64>,
    },
}

impl Default for FeedbackGain {
    fn default() -> Self {
        FeedbackGain::Integrator { unity_gain_hz: 10e3 }
    }
}

impl FeedbackGain {
    pub fn validate(&self) -> Result<()> {
        match self {
            FeedbackGain::Off => Ok(()),
            FeedbackGain::Constant { re, im } => {
                if re.is_finite() && im.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("constant feedback gain must be finite"))
                }
            }
            FeedbackGain::Integrator { unity_gain_hz } => {
                if *unity_gain_hz > 0.0 && unity_gain_hz.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("integrator unity-gain frequency must be > 0"))
                }
            }
            FeedbackGain::ZeroPole {
                gain,
                zeros_hz,
                poles_hz,
            } => {
                if !gain.is_finite() {
                    return Err(Error::invalid("zero-pole gain must be finite"));
                }
                if zeros_hz.iter().chain(poles_hz).any(|f| !(*f > 0.0)) {
                    return Err(Error::invalid("zero and pole frequencies must be > 0"));
                }
                Ok(())
            }
            FeedbackGain::Tabulated { freq_hz, re, im } => {
                validate_grid(freq_hz)?;
                if re.len() != freq_hz.len() || im.len() != freq_hz.len() {
                    return Err(Error::invalid("tabulated feedback columns differ in length"));
                }
                if re.iter().chain(im).any(|v| !v.is_finite()) {
                    return Err(Error::invalid("tabulated feedback must be finite"));
                }
                Ok(())
            }
        }
    }

    /// `G_fb` at a frequency in Hz.
    pub fn eval(&self, freq: f64) -> Result<Complex64> {
        let i = Complex64::i();
        match self {
            FeedbackGain::Off => Ok(Complex64::new(0.0, 0.0)),
            FeedbackGain::Constant { re, im } => Ok(Complex64::new(*re, *im)),
            FeedbackGain::Integrator { unity_gain_hz } => Ok(Complex64::new(*unity_gain_hz, 0.0) / (i * freq)),
            FeedbackGain::ZeroPole {
                gain,
                zeros_hz,
                poles_hz,
            } => {
                let mut g = Complex64::new(*gain, 0.0);
                for z in zeros_hz {
                    g *= Complex64::new(1.0, freq / z);
                }
                for p in poles_hz {
                    g /= Complex64::new(1.0, freq / p);
                }
                Ok(g)
            }
            FeedbackGain::Tabulated { freq_hz, re, im } => {
                let n = freq_hz.len();
                if freq < freq_hz[0] || freq > freq_hz[n - 1] {
                    return Err(Error::invalid(format!(
                        "{freq} Hz is outside the tabulated feedback range {}..{} Hz",
                        freq_hz[0],
                        freq_hz[n - 1]
                    )));
                }
                let j = freq_hz.partition_point(|&f| f < freq);
                if j < n && freq_hz[j] == freq {
                    return Ok(Complex64::new(re[j], im[j]));
                }
                let (a, b) = (j - 1, j);
                let t = (freq - freq_hz[a]) / (freq_hz[b] - freq_hz[a]);
                Ok(Complex64::new(re[a] + t * (re[b] - re[a]), im[a] + t * (im[b] - im[a])))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopModel {
    pub spring: SpringModel,
    pub feedback: FeedbackGain,
}

/// Largest tolerated `|1/(1+G_fb)|` on an analysis grid.
pub const MAX_CLOSED_LOOP_MAGNITUDE: f64 = 1e3;

impl LoopModel {
    pub fn new(spring: SpringModel, feedback: FeedbackGain) -> Result<Self> {
        spring.validate()?;
        feedback.validate()?;
        Ok(LoopModel { spring, feedback })
    }

    /// Checks that `G_fb` is finite and `1/(1+G_fb)` stays bounded on `grid`.
    pub fn validate_on(&self, grid: &[f64]) -> Result<()> {
        self.spring.validate()?;
        self.feedback.validate()?;
        for &f in grid {
            let g = self.feedback.eval(f)?;
            if !(g.re.is_finite() && g.im.is_finite()) {
                return Err(Error::ModelEvaluation(format!("feedback gain is not finite at {f} Hz")));
            }
            let den = (Complex64::new(1.0, 0.0) + g).norm();
            if den < 1.0 / MAX_CLOSED_LOOP_MAGNITUDE {
                return Err(Error::invalid(format!(
                    "closed-loop factor |1/(1+G_fb)| = {:e} exceeds {MAX_CLOSED_LOOP_MAGNITUDE} at {f} Hz",
                    1.0 / den
                )));
            }
        }
        Ok(())
    }
}

/// `G_os` on a grid.
pub fn optical_spring_gain(spring: &SpringModel, freq_grid: &[f64]) -> Result<CrossSpectrum> {
    spring.validate()?;
    validate_grid(freq_grid)?;
    let values = freq_grid.iter().map(|&f| spring.gain_at(f)).collect();
    CrossSpectrum::new(freq_grid.to_vec(), values, Units::Dimensionless)
}

/// `G_fb` on a grid.
pub fn feedback_gain(loop_model: &LoopModel, freq_grid: &[f64]) -> Result<CrossSpectrum> {
    validate_grid(freq_grid)?;
    let values = freq_grid
        .iter()
        .map(|&f| loop_model.feedback.eval(f))
        .collect::<Result<Vec<_>>>()?;
    CrossSpectrum::new(freq_grid.to_vec(), values, Units::Dimensionless)
}

/// `1 / (1 + G_fb)` on a grid.
pub fn closed_loop_factor(loop_model: &LoopModel, freq_grid: &[f64]) -> Result<CrossSpectrum> {
    validate_grid(freq_grid)?;
    let one = Complex64::new(1.0, 0.0);
    let values = freq_grid
        .iter()
        .map(|&f| {
            let den = one + loop_model.feedback.eval(f)?;
            if den.norm() < 1e-12 {
                return Err(Error::SingularLoop {
                    freq_hz: f,
                    magnitude: den.norm(),
                });
            }
            Ok(one / den)
        })
        .collect::<Result<Vec<_>>>()?;
    CrossSpectrum::new(freq_grid.to_vec(), values, Units::Dimensionless)
}

/// Divides a sprung displacement PSD by `|G_os|²`.
pub fn refer_to_free_mass(spec: &Spectrum, spring: &SpringModel) -> Result<Spectrum> {
    let gain = optical_spring_gain(spring, &spec.freq)?;
    refer_with_gain(spec, &gain)
}

/// Divides a PSD by `|G|²` for a precomputed gain on the same grid.
pub fn refer_with_gain(spec: &Spectrum, gain: &CrossSpectrum) -> Result<Spectrum> {
    ensure_same_grid(&spec.freq, &gain.freq, "free-mass referral")?;
    let g2: Vec<f64> = gain.values.iter().map(|g| g.norm_sqr()).collect();
    let mut out = spec.clone();
    for (v, g) in out.values.iter_mut().zip(&g2) {
        *v /= g;
    }
    if let Some(u) = out.uncertainty.as_mut() {
        for (v, g) in u.iter_mut().zip(&g2) {
            *v /= g;
        }
    }
    Ok(out)
}

/// Multiplies a free-mass PSD by `|G_os|²`.
pub fn refer_to_sprung(spec: &Spectrum, spring: &SpringModel) -> Result<Spectrum> {
    let gain = optical_spring_gain(spring, &spec.freq)?;
    let mut out = spec.clone();
    for (v, g) in out.values.iter_mut().zip(&gain.values) {
        *v *= g.norm_sqr();
    }
    if let Some(u) = out.uncertainty.as_mut() {
        for (v, g) in u.iter_mut().zip(&gain.values) {
            *v *= g.norm_sqr();
        }
    }
    Ok(out)
}
