//! Frequency-grid spectra: real power spectral densities and complex cross
//! spectra, with optional per-bin uncertainty and mask flags.

use std::fmt;
use std::ops::{BitOr, BitOrAssign};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Units {
    #[serde(rename = "m^2/Hz")]
    M2PerHz,
    #[serde(rename = "W^2/Hz")]
    W2PerHz,
    #[serde(rename = "V^2/Hz")]
    V2PerHz,
    #[serde(rename = "m/sqrt(Hz)")]
    MPerRootHz,
    #[serde(rename = "dimensionless")]
    Dimensionless,
}

impl Units {
    pub fn tag(self) -> &'static str {
        match self {
            Units::M2PerHz => "m^2/Hz",
            Units::W2PerHz => "W^2/Hz",
            Units::V2PerHz => "V^2/Hz",
            Units::MPerRootHz => "m/sqrt(Hz)",
            Units::Dimensionless => "dimensionless",
        }
    }
}

impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Units {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "m^2/Hz" => Ok(Units::M2PerHz),
            "W^2/Hz" => Ok(Units::W2PerHz),
            "V^2/Hz" => Ok(Units::V2PerHz),
            "m/sqrt(Hz)" => Ok(Units::MPerRootHz),
            "dimensionless" => Ok(Units::Dimensionless),
            other => Err(Error::invalid(format!("unknown units tag `{other}`"))),
        }
    }
}

/// Per-bin status bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct MaskFlags(pub u8);

impl MaskFlags {
    pub const NONE: MaskFlags = MaskFlags(0);
    /// Bin is excluded from further computation (undefined or below a floor).
    pub const MASKED: MaskFlags = MaskFlags(1);
    /// Value came out negative; kept as estimation noise.
    pub const NEGATIVE: MaskFlags = MaskFlags(1 << 1);
    /// Value is emitted but outside the band where the estimate can be trusted.
    pub const UNRELIABLE: MaskFlags = MaskFlags(1 << 2);
    /// Value was clamped for display.
    pub const CLAMPED: MaskFlags = MaskFlags(1 << 3);

    pub fn contains(self, other: MaskFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_masked(self) -> bool {
        self.contains(MaskFlags::MASKED)
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

impl BitOr for MaskFlags {
    type Output = MaskFlags;
    fn bitor(self, rhs: MaskFlags) -> MaskFlags {
        MaskFlags(self.0 | rhs.0)
    }
}

impl BitOrAssign for MaskFlags {
    fn bitor_assign(&mut self, rhs: MaskFlags) {
        self.0 |= rhs.0;
    }
}

/// Checks that a frequency grid is non-empty, finite, positive and strictly
/// increasing.
pub fn validate_grid(freq: &[f64]) -> Result<()> {
    if freq.is_empty() {
        return Err(Error::invalid("empty frequency grid"));
    }
    if let Some(bad) = freq.iter().find(|f| !f.is_finite() || **f <= 0.0) {
        return Err(Error::invalid(format!(
            "frequency grid values must be finite and > 0, got {bad}"
        )));
    }
    if let Some(w) = freq.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "frequency grid must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Two grids are the same if they have equal length and agree to 1e-12
/// relative per point.
pub fn grids_match(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()))
}

pub(crate) fn ensure_same_grid(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if grids_match(a, b) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what}: frequency grids differ")))
    }
}

/// Evenly spaced grid `lo, lo + df, ..., <= hi`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// Real-valued spectrum (PSD, ratio or coherence).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freq: Vec<f64>,
    pub values: Vec<f64>,
    pub units: Units,
    pub n_averages: u64,
    /// One-sigma statistical uncertainty per bin, when known.
    pub uncertainty: Option<Vec<f64>>,
    pub mask: Vec<MaskFlags>,
}

impl Spectrum {
    pub fn new(freq: Vec<f64>, values: Vec<f64>, units: Units) -> Result<Self> {
        validate_grid(&freq)?;
        if freq.len() != values.len() {
            return Err(Error::invalid(format!(
                "grid has {} points but {} values",
                freq.len(),
                values.len()
            )));
        }
        let mask = vec![MaskFlags::NONE; freq.len()];
        Ok(Spectrum {
            freq,
            values,
            units,
            n_averages: 0,
            uncertainty: None,
            mask,
        })
    }

    pub fn zeros(freq: Vec<f64>, units: Units) -> Result<Self> {
        let n = freq.len();
        Spectrum::new(freq, vec![0.0; n], units)
    }

    pub fn with_uncertainty(mut self, sigma: Vec<f64>) -> Self {
        debug_assert_eq!(sigma.len(), self.values.len());
        self.uncertainty = Some(sigma);
        self
    }

    pub fn with_averages(mut self, n: u64) -> Self {
        self.n_averages = n;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.mask[i].is_masked()
    }

    pub fn flag(&mut self, i: usize, flag: MaskFlags) {
        self.mask[i] |= flag;
    }

    /// Mean bin spacing; exact for uniform grids.
    pub fn bin_width(&self) -> f64 {
        if self.freq.len() < 2 {
            return 0.0;
        }
        (self.freq[self.freq.len() - 1] - self.freq[0]) / (self.freq.len() - 1) as f64
    }

    pub fn is_uniform(&self) -> bool {
        let df = self.bin_width();
        self.freq
            .windows(2)
            .all(|w| ((w[1] - w[0]) - df).abs() <= 1e-9 * df.abs().max(f64::MIN_POSITIVE))
    }

    /// Copy of the bins with `lo <= f <= hi`.
    pub fn select_band(&self, lo: f64, hi: f64) -> Result<Spectrum> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.freq[i] >= lo && self.freq[i] <= hi)
            .collect();
        if idx.is_empty() {
            return Err(Error::invalid(format!("band {lo}..{hi} Hz contains no grid points")));
        }
        Ok(Spectrum {
            freq: idx.iter().map(|&i| self.freq[i]).collect(),
            values: idx.iter().map(|&i| self.values[i]).collect(),
            units: self.units,
            n_averages: self.n_averages,
            uncertainty: self.uncertainty.as_ref().map(|u| idx.iter().map(|&i| u[i]).collect()),
            mask: idx.iter().map(|&i| self.mask[i]).collect(),
        })
    }

    /// Pointwise map of the values, keeping grid, mask and units.
    pub fn map_values(&self, units: Units, f: impl Fn(f64, f64) -> f64) -> Spectrum {
        Spectrum {
            freq: self.freq.clone(),
            values: self.freq.iter().zip(&self.values).map(|(&fr, &v)| f(fr, v)).collect(),
            units,
            n_averages: self.n_averages,
            uncertainty: None,
            mask: self.mask.clone(),
        }
    }

    /// Marks every bin at or above `freq_hz` as unreliable.
    pub fn flag_unreliable_above(&mut self, freq_hz: f64) {
        for (f, m) in self.freq.iter().zip(self.mask.iter_mut()) {
            if *f >= freq_hz {
                *m |= MaskFlags::UNRELIABLE;
            }
        }
    }

    /// Number of bins not carrying the `MASKED` flag.
    pub fn n_unmasked(&self) -> usize {
        self.mask.iter().filter(|m| !m.is_masked()).count()
    }
}

/// Complex cross spectrum, stored as (re, im) per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSpectrum {
    pub freq: Vec<f64>,
    pub values: Vec<Complex64>,
    pub units: Units,
    pub n_averages: u64,
    /// One-sigma standard error of the real part, when known.
    pub uncertainty: Option<Vec<f64>>,
    pub mask: Vec<MaskFlags>,
}

impl CrossSpectrum {
    pub fn new(freq: Vec<f64>, values: Vec<Complex64>, units: Units) -> Result<Self> {
        validate_grid(&freq)?;
        if freq.len() != values.len() {
            return Err(Error::invalid(format!(
                "grid has {} points but {} values",
                freq.len(),
                values.len()
            )));
        }
        let mask = vec![MaskFlags::NONE; freq.len()];
        Ok(CrossSpectrum {
            freq,
            values,
            units,
            n_averages: 0,
            uncertainty: None,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn real_part(&self) -> Spectrum {
        Spectrum {
            freq: self.freq.clone(),
            values: self.values.iter().map(|c| c.re).collect(),
            units: self.units,
            n_averages: self.n_averages,
            uncertainty: self.uncertainty.clone(),
            mask: self.mask.clone(),
        }
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm()).collect()
    }

    pub fn phase(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.arg()).collect()
    }

    pub fn conj(&self) -> CrossSpectrum {
        CrossSpectrum {
            values: self.values.iter().map(|c| c.conj()).collect(),
            ..self.clone()
        }
    }

    pub fn select_band(&self, lo: f64, hi: f64) -> Result<CrossSpectrum> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.freq[i] >= lo && self.freq[i] <= hi)
            .collect();
        if idx.is_empty() {
            return Err(Error::invalid(format!("band {lo}..{hi} Hz contains no grid points")));
        }
        Ok(CrossSpectrum {
            freq: idx.iter().map(|&i| self.freq[i]).collect(),
            values: idx.iter().map(|&i| self.values[i]).collect(),
            units: self.units,
            n_averages: self.n_averages,
            uncertainty: self.uncertainty.as_ref().map(|u| idx.iter().map(|&i| u[i]).collect()),
            mask: idx.iter().map(|&i| self.mask[i]).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[]).is_err());
        assert!(validate_grid(&[0.0, 1.0]).is_err());
        assert!(validate_grid(&[2.0, 1.0]).is_err());
        assert!(validate_grid(&[1.0, 1.0]).is_err());
        assert!(validate_grid(&[1.0, f64::NAN]).is_err());
        assert!(validate_grid(&[1.0, 2.0, 3.5]).is_ok());
    }

    #[test]
    fn band_selection_keeps_uncertainty_and_mask() {
        let mut s = Spectrum::new(vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.0], Units::M2PerHz)
            .unwrap()
            .with_uncertainty(vec![0.1, 0.2, 0.3, 0.4]);
        s.flag(2, MaskFlags::NEGATIVE);
        let b = s.select_band(2.0, 3.0).unwrap();
        assert_eq!(b.freq, vec![2.0, 3.0]);
        assert_eq!(b.uncertainty.unwrap(), vec![0.2, 0.3]);
        assert!(b.mask[1].contains(MaskFlags::NEGATIVE));
        assert!(s.select_band(10.0, 20.0).is_err());
    }

    #[test]
    fn units_tag_round_trip() {
        for u in [
            Units::M2PerHz,
            Units::W2PerHz,
            Units::V2PerHz,
            Units::MPerRootHz,
            Units::Dimensionless,
        ] {
            assert_eq!(u.tag().parse::<Units>().unwrap(), u);
        }
    }
}
