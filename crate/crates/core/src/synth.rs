//! Frequency-domain synthesis of the three photodetector channels.
//!
//! Every Welch segment is generated directly as one-sided complex bin
//! amplitudes scaled so that `E|X|² = PSD`. Per bin and segment, eight
//! independent circular complex Gaussian unit variates are drawn in a fixed
//! order:
//!
//! | variate | meaning |
//! |---------|---------|
//! | `v0`    | vacuum leaving the cavity |
//! | `vbs`   | vacuum entering the unused beamsplitter port |
//! | `vf`    | laser frequency noise |
//! | `vth`   | thermal force noise |
//! | `vrp`   | radiation-pressure force noise |
//! | `eL, eM, eF` | electronics noise of each detector |
//!
//! The channels are then
//!
//! ```text
//! D    = G_os · (√S_th·vth + √S_f·vf + s·√S_rp·vrp) / (√2·K_m)
//! P_L0 = shot_L·(v0 + vbs)/√2 + D + √S_el,L·eL
//! P_M0 = shot_M·(v0 − vbs)/√2 + D + √S_el,M·eM
//! PD_L = P_L0 / (1 + G_fb)
//! PD_M = P_M0 − G_fb/(1 + G_fb) · P_L0
//! PD_F = √S_f·vf / K_m + √S_el,F·eF
//! ```
//!
//! where `s` is the optical-spring radiation-pressure suppression. The
//! radiation-pressure term is common to both cavity detectors but independent
//! of the detected shot-noise quadrature, so the cross spectrum of `PD_L` and
//! `PD_M` keeps it while the `vbs` terms cancel.
//!
//! Segment `i` draws from ChaCha12 seeded with `seed` on stream `i`, which
//! makes the output independent of how segments are scheduled over threads.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_models::{
    qrpn_psd_free_mass, qrpn_suppression_factor, shot_noise_rpn_psd, thermal_psd, ModeSet, OpticalConfig,
};
use crate::pipeline::CalibrationConstant;
use crate::spectrum::{Spectrum, Units};
use crate::spring_loop::{closed_loop_factor, feedback_gain, optical_spring_gain, LoopModel};

/// Name and version of the generator, recorded in dataset files.
pub const RNG_ALGORITHM: &str = "chacha12/rand_chacha-0.9/seed_from_u64+stream=segment";

/// Number of variates drawn per bin and segment.
const VARIATES_PER_BIN: usize = 8;

/// Laser frequency noise referred to free-mass displacement:
/// `S_f(f) = amplitude · (1 kHz / f)^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfnModel {
    /// m²/Hz at 1 kHz.
    pub amplitude_at_1khz: f64,
    pub exponent: f64,
}

impl LfnModel {
    pub fn off() -> Self {
        LfnModel {
            amplitude_at_1khz: 0.0,
            exponent: 2.0,
        }
    }

    pub fn psd(&self, freq: f64) -> f64 {
        self.amplitude_at_1khz * (1e3 / freq).powf(self.exponent)
    }
}

/// Detected powers, detector gain and electronics noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// DC power on `PD_L`, W. Zero disables its shot noise.
    pub power_l: f64,
    /// DC power on `PD_M`, W.
    pub power_m: f64,
    /// Detector gain, V/W.
    pub gain_v_per_w: f64,
    /// Electronics noise of each detector, V²/Hz.
    pub electronics_l: f64,
    pub electronics_m: f64,
    pub electronics_f: f64,
}

impl DetectionConfig {
    pub fn quiet() -> Self {
        DetectionConfig {
            power_l: 0.0,
            power_m: 0.0,
            gain_v_per_w: 1.0,
            electronics_l: 0.0,
            electronics_m: 0.0,
            electronics_f: 0.0,
        }
    }

    /// Shot-noise PSD of a detector in V²/Hz: `2hν·P·G²`.
    pub fn shot_psd(&self, power: f64, wavelength: f64) -> Result<f64> {
        if power == 0.0 {
            return Ok(0.0);
        }
        let rpn = shot_noise_rpn_psd(power, wavelength)?;
        Ok(rpn * (power * self.gain_v_per_w).powi(2))
    }
}

/// Everything needed to synthesise one measurement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub optical: OpticalConfig,
    pub modeset: ModeSet,
    pub loop_model: LoopModel,
    pub lfn: LfnModel,
    pub detection: DetectionConfig,
    pub calibration: CalibrationConstant,
    /// Apply the `ω/ω_os` radiation-pressure suppression below the spring.
    pub qrpn_suppression: bool,
    /// Include radiation-pressure noise at all.
    pub qrpn_enabled: bool,
    pub thermal_enabled: bool,
    /// Samples per segment (power of two, >= 256).
    pub segment_length: usize,
    pub n_segments: usize,
    /// Hz
    pub sample_rate: f64,
    /// Analysis band `[lo, hi]`, Hz.
    pub analysis_band: [f64; 2],
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments == 0 {
            return Err(Error::invalid("n_segments must be >= 1"));
        }
        if !self.segment_length.is_power_of_two() || self.segment_length < 256 {
            return Err(Error::invalid(format!(
                "segment_length must be a power of two >= 256, got {}",
                self.segment_length
            )));
        }
        let [lo, hi] = self.analysis_band;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::invalid(format!(
                "analysis band must satisfy 0 < lo < hi, got {lo}..{hi}"
            )));
        }
        if !(self.sample_rate > 2.0 * hi) {
            return Err(Error::invalid(format!(
                "sample rate {} Hz does not exceed twice the highest analysis frequency {hi} Hz",
                self.sample_rate
            )));
        }
        self.optical.validate()?;
        self.modeset.validate()?;
        self.calibration.validate()?;
        if self.qrpn_enabled && !(self.optical.input_power > 0.0) {
            return Err(Error::invalid("radiation-pressure noise needs input power > 0"));
        }
        let d = &self.detection;
        for (name, v) in [
            ("power_l", d.power_l),
            ("power_m", d.power_m),
            ("electronics_l", d.electronics_l),
            ("electronics_m", d.electronics_m),
            ("electronics_f", d.electronics_f),
            ("lfn amplitude", self.lfn.amplitude_at_1khz),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        self.loop_model.validate_on(&self.bin_freqs())?;
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.segment_length / 2
    }

    pub fn bin_width(&self) -> f64 {
        self.sample_rate / self.segment_length as f64
    }

    /// One-sided bin centres `k·fs/N` for `k = 1..=N/2` (DC excluded).
    pub fn bin_freqs(&self) -> Vec<f64> {
        let df = self.bin_width();
        (1..=self.n_bins()).map(|k| k as f64 * df).collect()
    }
}

/// Photodetector channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    /// Frequency-noise reference after the delay-line interferometer.
    F,
    /// Cavity transmission detector carrying the feedback.
    L,
    /// Second cavity transmission detector.
    M,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::F, Channel::L, Channel::M];

    pub fn index(self) -> usize {
        match self {
            Channel::F => 0,
            Channel::L => 1,
            Channel::M => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::F => "F",
            Channel::L => "L",
            Channel::M => "M",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().trim_start_matches("PD_") {
            "F" => Ok(Channel::F),
            "L" => Ok(Channel::L),
            "M" => Ok(Channel::M),
            other => Err(Error::invalid(format!("unknown channel `{other}`"))),
        }
    }
}

/// Borrowed view of one segment's three channels on the common bin grid.
#[derive(Debug, Clone, Copy)]
pub struct SegmentSpectra<'a> {
    pub index: usize,
    pub f: &'a [Complex64],
    pub l: &'a [Complex64],
    pub m: &'a [Complex64],
}

/// Names of the injected-truth spectra.
pub mod truth {
    /// Thermal displacement, free mass, m²/Hz.
    pub const THERMAL_FM: &str = "thermal_fm";
    /// Radiation-pressure displacement without spring suppression, m²/Hz.
    pub const QRPN_FM: &str = "qrpn_fm";
    /// Radiation-pressure displacement as injected (suppressed if enabled), m²/Hz.
    pub const QRPN_FM_INJECTED: &str = "qrpn_fm_injected";
    /// Laser frequency noise, free mass, m²/Hz.
    pub const LFN_FM: &str = "lfn_fm";
    /// Shot noise on `PD_L` / `PD_M`, V²/Hz.
    pub const SHOT_L: &str = "shot_l";
    pub const SHOT_M: &str = "shot_m";
    /// Electronics noise, V²/Hz.
    pub const ELECTRONICS_L: &str = "electronics_l";
    pub const ELECTRONICS_M: &str = "electronics_m";
    pub const ELECTRONICS_F: &str = "electronics_f";
    /// `|G_os|²`.
    pub const SPRING_GAIN_SQ: &str = "spring_gain_sq";
    /// `|1/(1+G_fb)|²`.
    pub const CLOSED_LOOP_SQ: &str = "closed_loop_sq";
    /// Real and imaginary parts of `G_fb`.
    pub const FEEDBACK_RE: &str = "feedback_re";
    pub const FEEDBACK_IM: &str = "feedback_im";
    /// Shot noise on `PD_L` in calibrated displacement units before spring
    /// referral (`2 K_m² S_sn,L`), m²/Hz.
    pub const SHOT_L_DISPLACEMENT: &str = "shot_l_displacement";
    /// Electronics noise on `PD_L` in displacement units (`2 K_m² S_el,L`), m²/Hz.
    pub const ELECTRONICS_L_DISPLACEMENT: &str = "electronics_l_displacement";

    pub const ALL: [&str; 15] = [
        THERMAL_FM,
        QRPN_FM,
        QRPN_FM_INJECTED,
        LFN_FM,
        SHOT_L,
        SHOT_M,
        ELECTRONICS_L,
        ELECTRONICS_M,
        ELECTRONICS_F,
        SPRING_GAIN_SQ,
        CLOSED_LOOP_SQ,
        FEEDBACK_RE,
        FEEDBACK_IM,
        SHOT_L_DISPLACEMENT,
        ELECTRONICS_L_DISPLACEMENT,
    ];
}

/// Exact model spectra behind a synthetic run, on its bin grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSet {
    pub freq: Vec<f64>,
    pub entries: Vec<(String, Vec<f64>)>,
}

impl TruthSet {
    pub fn values(&self, name: &str) -> Result<&[f64]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::invalid(format!("truth set has no `{name}` entry")))
    }

    pub fn spectrum(&self, name: &str) -> Result<Spectrum> {
        let units = match name {
            truth::SHOT_L | truth::SHOT_M | truth::ELECTRONICS_L | truth::ELECTRONICS_M | truth::ELECTRONICS_F => {
                Units::V2PerHz
            }
            truth::SPRING_GAIN_SQ | truth::CLOSED_LOOP_SQ | truth::FEEDBACK_RE | truth::FEEDBACK_IM => {
                Units::Dimensionless
            }
            _ => Units::M2PerHz,
        };
        Spectrum::new(self.freq.clone(), self.values(name)?.to_vec(), units)
    }

    /// Shot plus electronics noise on `PD_L` referred to the free mass,
    /// `2 K_m² (S_sn,L + S_el,L) / |G_os|²`.
    pub fn uncorrelated_referred(&self) -> Result<Vec<f64>> {
        let shot = self.values(truth::SHOT_L_DISPLACEMENT)?;
        let el = self.values(truth::ELECTRONICS_L_DISPLACEMENT)?;
        let g2 = self.values(truth::SPRING_GAIN_SQ)?;
        Ok((0..self.freq.len()).map(|i| (shot[i] + el[i]) / g2[i]).collect())
    }

    /// Expected `S0`: thermal + injected radiation pressure + referred
    /// uncorrelated noise.
    pub fn expected_s0(&self) -> Result<Vec<f64>> {
        let th = self.values(truth::THERMAL_FM)?;
        let rp = self.values(truth::QRPN_FM_INJECTED)?;
        let unc = self.uncorrelated_referred()?;
        Ok((0..self.freq.len()).map(|i| th[i] + rp[i] + unc[i]).collect())
    }

    /// Expected `S1`: thermal + injected radiation pressure − `Re(G_fb)` ×
    /// referred uncorrelated noise (the feedback imprint left in `S_LM`).
    pub fn expected_s1(&self) -> Result<Vec<f64>> {
        let th = self.values(truth::THERMAL_FM)?;
        let rp = self.values(truth::QRPN_FM_INJECTED)?;
        let gre = self.values(truth::FEEDBACK_RE)?;
        let unc = self.uncorrelated_referred()?;
        Ok((0..self.freq.len()).map(|i| th[i] + rp[i] - gre[i] * unc[i]).collect())
    }
}

/// Per-bin amplitude coefficients shared by all segments.
#[derive(Debug, Clone)]
struct BinCoefficients {
    /// Displacement coefficients in detector units: thermal, lfn, qrpn.
    disp_th: Complex64,
    disp_f: Complex64,
    disp_rp: Complex64,
    shot_l: f64,
    shot_m: f64,
    el_l: f64,
    el_m: f64,
    el_f: f64,
    /// PD_F frequency-noise coefficient.
    f_lfn: f64,
    closed: Complex64,
    fb_closed: Complex64,
}

/// Builds the exact model spectra for `cfg` on its bin grid.
pub fn injected_truth(cfg: &RunConfig) -> Result<TruthSet> {
    cfg.validate()?;
    let freq = cfg.bin_freqs();
    let n = freq.len();
    let thermal = if cfg.thermal_enabled {
        thermal_psd(&cfg.modeset, &freq)?.values
    } else {
        vec![0.0; n]
    };
    let qrpn = if cfg.qrpn_enabled {
        qrpn_psd_free_mass(&cfg.optical, &freq)?.values
    } else {
        vec![0.0; n]
    };
    let os = cfg.loop_model.spring.os_freq;
    let qrpn_injected: Vec<f64> = freq
        .iter()
        .zip(&qrpn)
        .map(|(&f, &q)| {
            if cfg.qrpn_suppression {
                let s = qrpn_suppression_factor(f, os);
                q * s * s
            } else {
                q
            }
        })
        .collect();
    let lfn: Vec<f64> = freq.iter().map(|&f| cfg.lfn.psd(f)).collect();
    let lambda = cfg.optical.wavelength;
    let shot_l = cfg.detection.shot_psd(cfg.detection.power_l, lambda)?;
    let shot_m = cfg.detection.shot_psd(cfg.detection.power_m, lambda)?;
    let gain = optical_spring_gain(&cfg.loop_model.spring, &freq)?;
    let closed = closed_loop_factor(&cfg.loop_model, &freq)?;
    let fb = feedback_gain(&cfg.loop_model, &freq)?;
    let k2 = cfg.calibration.k_m * cfg.calibration.k_m;

    let entries = vec![
        (truth::THERMAL_FM, thermal),
        (truth::QRPN_FM, qrpn),
        (truth::QRPN_FM_INJECTED, qrpn_injected),
        (truth::LFN_FM, lfn),
        (truth::SHOT_L, vec![shot_l; n]),
        (truth::SHOT_M, vec![shot_m; n]),
        (truth::ELECTRONICS_L, vec![cfg.detection.electronics_l; n]),
        (truth::ELECTRONICS_M, vec![cfg.detection.electronics_m; n]),
        (truth::ELECTRONICS_F, vec![cfg.detection.electronics_f; n]),
        (
            truth::SPRING_GAIN_SQ,
            gain.values.iter().map(|g| g.norm_sqr()).collect(),
        ),
        (
            truth::CLOSED_LOOP_SQ,
            closed.values.iter().map(|c| c.norm_sqr()).collect(),
        ),
        (truth::FEEDBACK_RE, fb.values.iter().map(|g| g.re).collect()),
        (truth::FEEDBACK_IM, fb.values.iter().map(|g| g.im).collect()),
        (truth::SHOT_L_DISPLACEMENT, vec![2.0 * k2 * shot_l; n]),
        (
            truth::ELECTRONICS_L_DISPLACEMENT,
            vec![2.0 * k2 * cfg.detection.electronics_l; n],
        ),
    ];
    for (name, values) in &entries {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::ModelEvaluation(format!(
                "`{name}` is not finite at {} Hz",
                freq[i]
            )));
        }
    }
    Ok(TruthSet {
        freq,
        entries: entries.into_iter().map(|(n, v)| (n.to_string(), v)).collect(),
    })
}

fn bin_coefficients(cfg: &RunConfig, truth: &TruthSet) -> Result<Vec<BinCoefficients>> {
    let freq = &truth.freq;
    let gain = optical_spring_gain(&cfg.loop_model.spring, freq)?;
    let closed = closed_loop_factor(&cfg.loop_model, freq)?;
    let fb = feedback_gain(&cfg.loop_model, freq)?;
    let th = truth.values(truth::THERMAL_FM)?;
    let rp = truth.values(truth::QRPN_FM_INJECTED)?;
    let lfn = truth.values(truth::LFN_FM)?;
    let shot_l = truth.values(truth::SHOT_L)?;
    let shot_m = truth.values(truth::SHOT_M)?;
    let k = cfg.calibration.k_m;
    let disp_scale = 1.0 / (std::f64::consts::SQRT_2 * k);
    Ok((0..freq.len())
        .map(|i| {
            let g = gain.values[i] * disp_scale;
            BinCoefficients {
                disp_th: g * th[i].sqrt(),
                disp_f: g * lfn[i].sqrt(),
                disp_rp: g * rp[i].sqrt(),
                shot_l: (shot_l[i] / 2.0).sqrt(),
                shot_m: (shot_m[i] / 2.0).sqrt(),
                el_l: cfg.detection.electronics_l.sqrt(),
                el_m: cfg.detection.electronics_m.sqrt(),
                el_f: cfg.detection.electronics_f.sqrt(),
                f_lfn: lfn[i].sqrt() / k,
                closed: closed.values[i],
                fb_closed: fb.values[i] * closed.values[i],
            }
        })
        .collect())
}

#[inline]
fn complex_normal(rng: &mut ChaCha12Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Synthesises one segment into the three output slices.
fn synth_segment(
    seed: u64,
    index: usize,
    coeffs: &[BinCoefficients],
    f_out: &mut [Complex64],
    l_out: &mut [Complex64],
    m_out: &mut [Complex64],
) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut v = [Complex64::new(0.0, 0.0); VARIATES_PER_BIN];
    for (k, c) in coeffs.iter().enumerate() {
        for slot in v.iter_mut() {
            *slot = complex_normal(&mut rng);
        }
        let [v0, vbs, vf, vth, vrp, el, em, ef] = v;
        let disp = c.disp_th * vth + c.disp_f * vf + c.disp_rp * vrp;
        let p_l0 = c.shot_l * (v0 + vbs) + disp + c.el_l * el;
        let p_m0 = c.shot_m * (v0 - vbs) + disp + c.el_m * em;
        l_out[k] = c.closed * p_l0;
        m_out[k] = p_m0 - c.fb_closed * p_l0;
        f_out[k] = c.f_lfn * vf + c.el_f * ef;
    }
}

/// A simulated or loaded measurement: per-segment complex bin amplitudes of
/// channels F, L and M, normalised so `|X|²` averages to the one-sided PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDataset {
    pub config: Option<RunConfig>,
    pub rng_algorithm: String,
    pub freq: Vec<f64>,
    pub n_segments: usize,
    pub units: Units,
    /// Indexed by [`Channel::index`]; each is `n_segments × n_bins`, row-major.
    pub channels: [Vec<Complex64>; 3],
    pub truth: Option<TruthSet>,
}

impl RunDataset {
    pub fn n_bins(&self) -> usize {
        self.freq.len()
    }

    pub fn channel(&self, ch: Channel) -> &[Complex64] {
        &self.channels[ch.index()]
    }

    /// Bin `k` of channel `ch` in segment `seg`.
    #[inline]
    pub fn bin(&self, ch: Channel, seg: usize, k: usize) -> Complex64 {
        self.channels[ch.index()][seg * self.freq.len() + k]
    }

    pub fn segment(&self, seg: usize) -> SegmentSpectra<'_> {
        let n = self.freq.len();
        let r = seg * n..(seg + 1) * n;
        SegmentSpectra {
            index: seg,
            f: &self.channels[0][r.clone()],
            l: &self.channels[1][r.clone()],
            m: &self.channels[2][r],
        }
    }

    /// Dataset restricted to its first `n` segments.
    pub fn truncated(&self, n: usize) -> Result<RunDataset> {
        if n == 0 || n > self.n_segments {
            return Err(Error::invalid(format!(
                "cannot keep {n} of {} segments",
                self.n_segments
            )));
        }
        let len = n * self.freq.len();
        let mut out = self.clone();
        for c in out.channels.iter_mut() {
            c.truncate(len);
        }
        out.n_segments = n;
        if let Some(cfg) = out.config.as_mut() {
            cfg.n_segments = n;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        crate::spectrum::validate_grid(&self.freq)?;
        if self.n_segments == 0 {
            return Err(Error::invalid("dataset has no segments"));
        }
        let expected = self.n_segments * self.freq.len();
        if self.channels.iter().any(|c| c.len() != expected) {
            return Err(Error::invalid("channel arrays do not match segments × bins"));
        }
        Ok(())
    }
}

/// Generates a full synthetic run with its injected truth.
pub fn synthesize_run(cfg: &RunConfig) -> Result<RunDataset> {
    let truth = injected_truth(cfg)?;
    let coeffs = bin_coefficients(cfg, &truth)?;
    let n_bins = coeffs.len();
    let total = cfg.n_segments * n_bins;
    let zero = Complex64::new(0.0, 0.0);
    let mut f = vec![zero; total];
    let mut l = vec![zero; total];
    let mut m = vec![zero; total];

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        f.par_chunks_mut(n_bins)
            .zip(l.par_chunks_mut(n_bins))
            .zip(m.par_chunks_mut(n_bins))
            .enumerate()
            .for_each(|(i, ((fs, ls), ms))| synth_segment(cfg.seed, i, &coeffs, fs, ls, ms));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, ((fs, ls), ms)) in f
            .chunks_mut(n_bins)
            .zip(l.chunks_mut(n_bins))
            .zip(m.chunks_mut(n_bins))
            .enumerate()
        {
            synth_segment(cfg.seed, i, &coeffs, fs, ls, ms);
        }
    }

    Ok(RunDataset {
        config: Some(cfg.clone()),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        freq: truth.freq.clone(),
        n_segments: cfg.n_segments,
        units: Units::V2PerHz,
        channels: [f, l, m],
        truth: Some(truth),
    })
}
