//! Experiment configuration files.
//!
//! TOML with a `schema_version`, one `[[run]]` table per run and an optional
//! `[defaults]` table merged under every run (run keys win, nested tables
//! merge key by key). Every physical quantity carries its unit in the key
//! name. See `docs/formats.md` for the full key list.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_models::{MechanicalMode, ModeSet, OpticalConfig};
use crate::pipeline::CalibrationConstant;
use crate::spring_loop::{FeedbackGain, LoopModel, SpringModel};
use crate::synth::{DetectionConfig, LfnModel, RunConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub k_m_m_per_v: f64,
    #[serde(default)]
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub band_hz: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Band for the dB-below-SQL figures; the analysis band when absent.
    #[serde(default)]
    pub sql_band_hz: Option<[f64; 2]>,
    /// Relative tolerance for the truth-residual pass/fail summary.
    #[serde(default = "default_tolerance")]
    pub residual_tolerance: f64,
    /// Fraction of bins that must pass for a band to pass.
    #[serde(default = "default_pass_fraction")]
    pub pass_fraction: f64,
}

fn default_tolerance() -> f64 {
    0.1
}

fn default_pass_fraction() -> f64 {
    0.95
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            sql_band_hz: None,
            residual_tolerance: default_tolerance(),
            pass_fraction: default_pass_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSection {
    pub freq_hz: f64,
    pub modal_mass_kg: f64,
    /// Per-mode override of the run's quality factor.
    #[serde(default)]
    pub quality_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LfnSection {
    pub amplitude_m2_per_hz_at_1khz: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    pub power_l_mw: f64,
    pub power_m_mw: f64,
    pub gain_v_per_w: f64,
    pub electronics_l_v2_per_hz: f64,
    pub electronics_m_v2_per_hz: f64,
    pub electronics_f_v2_per_hz: f64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub seed: u64,
    pub n_segments: usize,
    pub segment_length: usize,
    pub sample_rate_hz: f64,
    pub wavelength_nm: f64,
    pub cavity_length_m: f64,
    pub input_power_mw: f64,
    pub input_transmission: f64,
    pub detuning_linewidths: f64,
    pub reduced_mass_kg: f64,
    pub temperature_k: f64,
    pub quality_factor: f64,
    pub os_freq_hz: f64,
    pub os_damping_ratio: f64,
    #[serde(default = "yes")]
    pub qrpn_enabled: bool,
    #[serde(default = "yes")]
    pub qrpn_suppression: bool,
    #[serde(default = "yes")]
    pub thermal_enabled: bool,
    pub modes: Vec<ModeSection>,
    #[serde(default)]
    pub feedback: FeedbackGain,
    pub lfn: LfnSection,
    pub detection: DetectionSection,
}

impl RunSection {
    fn to_run_config(&self, k: &CalibrationConstant, band: [f64; 2]) -> Result<RunConfig> {
        let optical = OpticalConfig::from_transmission(
            self.wavelength_nm * 1e-9,
            self.input_power_mw * 1e-3,
            self.input_transmission,
            self.detuning_linewidths,
            self.reduced_mass_kg,
            self.cavity_length_m,
        )?;
        if !(self.quality_factor > 1.0) {
            return Err(Error::invalid("quality_factor must be > 1"));
        }
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let mode = MechanicalMode::new(m.modal_mass_kg, m.freq_hz);
                match m.quality_factor {
                    Some(q) => mode.with_loss_angle(1.0 / q),
                    None => mode,
                }
            })
            .collect();
        let modeset = ModeSet::new(modes, 1.0 / self.quality_factor, self.temperature_k)?;
        let d = &self.detection;
        let cfg = RunConfig {
            name: self.name.clone(),
            optical,
            modeset,
            loop_model: LoopModel::new(
                SpringModel::new(self.os_freq_hz, self.os_damping_ratio)?,
                self.feedback.clone(),
            )?,
            lfn: LfnModel {
                amplitude_at_1khz: self.lfn.amplitude_m2_per_hz_at_1khz,
                exponent: self.lfn.exponent,
            },
            detection: DetectionConfig {
                power_l: d.power_l_mw * 1e-3,
                power_m: d.power_m_mw * 1e-3,
                gain_v_per_w: d.gain_v_per_w,
                electronics_l: d.electronics_l_v2_per_hz,
                electronics_m: d.electronics_m_v2_per_hz,
                electronics_f: d.electronics_f_v2_per_hz,
            },
            calibration: k.clone(),
            qrpn_suppression: self.qrpn_suppression,
            qrpn_enabled: self.qrpn_enabled,
            thermal_enabled: self.thermal_enabled,
            segment_length: self.segment_length,
            n_segments: self.n_segments,
            sample_rate: self.sample_rate_hz,
            analysis_band: band,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileLayout {
    schema_version: u32,
    #[serde(default)]
    output_dir: Option<String>,
    calibration: CalibrationSection,
    analysis: AnalysisSection,
    #[serde(default)]
    report: ReportSection,
    #[serde(default)]
    defaults: toml::Table,
    #[serde(default)]
    run: Vec<toml::Table>,
}

/// A parsed and validated experiment file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub output_dir: Option<String>,
    pub calibration: CalibrationConstant,
    pub analysis_band: [f64; 2],
    pub report: ReportSection,
    pub runs: Vec<RunConfig>,
}

fn config_error(path: impl Into<String>, message: impl std::fmt::Display) -> Error {
    Error::Config {
        path: path.into(),
        message: message.to_string(),
    }
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (key, value) in over {
        match (base.get_mut(key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(key.clone(), value.clone());
            }
        }
    }
}

fn deserialize_at<T: serde::de::DeserializeOwned>(table: toml::Table, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(table).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (true, _) => inner.clone(),
            (false, ".") => prefix.to_string(),
            (false, _) => format!("{prefix}.{inner}"),
        };
        config_error(path, e.into_inner())
    })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| config_error("<document>", e.message()))?;
        let layout: FileLayout = deserialize_at(table, "")?;
        if layout.schema_version != SCHEMA_VERSION {
            return Err(config_error(
                "schema_version",
                format!(
                    "unsupported schema version {} (expected {SCHEMA_VERSION})",
                    layout.schema_version
                ),
            ));
        }
        let calibration = CalibrationConstant {
            k_m: layout.calibration.k_m_m_per_v,
            provenance: layout.calibration.provenance,
        };
        calibration
            .validate()
            .map_err(|e| config_error("calibration.k_m_m_per_v", e))?;
        let band = layout.analysis.band_hz;
        if !(band[0] > 0.0 && band[1] > band[0]) {
            return Err(config_error("analysis.band_hz", "need 0 < lo < hi"));
        }
        if layout.run.is_empty() {
            return Err(config_error("run", "no [[run]] tables"));
        }
        let mut runs: Vec<RunConfig> = Vec::with_capacity(layout.run.len());
        for (i, raw) in layout.run.iter().enumerate() {
            let prefix = format!("run[{i}]");
            let mut merged = layout.defaults.clone();
            merge(&mut merged, raw);
            let section: RunSection = deserialize_at(merged, &prefix)?;
            if runs.iter().any(|r| r.name == section.name) {
                return Err(config_error(
                    format!("{prefix}.name"),
                    format!("duplicate run name `{}`", section.name),
                ));
            }
            let nyquist = section.sample_rate_hz / 2.0;
            if band[1] >= nyquist {
                return Err(config_error(
                    "analysis.band_hz",
                    format!(
                        "upper edge {} Hz is not below run `{}` Nyquist frequency {nyquist} Hz",
                        band[1], section.name
                    ),
                ));
            }
            let run = section
                .to_run_config(&calibration, band)
                .map_err(|e| config_error(prefix.clone(), e))?;
            runs.push(run);
        }
        Ok(ExperimentConfig {
            schema_version: layout.schema_version,
            output_dir: layout.output_dir,
            calibration,
            analysis_band: band,
            report: layout.report,
            runs,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn run_names(&self) -> Vec<&str> {
        self.runs.iter().map(|r| r.name.as_str()).collect()
    }

    pub fn run(&self, name: &str) -> Result<&RunConfig> {
        self.runs.iter().find(|r| r.name == name).ok_or_else(|| {
            config_error(
                "run",
                format!("no run named `{name}`; available: {}", self.run_names().join(", ")),
            )
        })
    }

    pub fn sql_band(&self) -> [f64; 2] {
        self.report.sql_band_hz.unwrap_or(self.analysis_band)
    }
}

/// Canonical text of a run configuration in SI units, as embedded in
/// dataset files.
pub fn run_config_to_toml(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::invalid(format!("cannot serialise run config: {e}")))
}

pub fn run_config_from_toml(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::CorruptData(format!("embedded config: {e}")))?;
    Ok(cfg)
}
