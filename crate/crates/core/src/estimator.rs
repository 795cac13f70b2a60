//! Spectral estimation over segmented data.
//!
//! Datasets hold per-segment bin amplitudes already scaled to one-sided
//! density, so a Welch PSD is the plain mean of `|X|²` over segments and a
//! CPSD the mean of `X_A·conj(X_B)`. Time series are brought into that form by
//! [`segment_time_series`]. Reductions run over segments in index order for
//! every bin, so results do not depend on the thread count.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::constants::PI;
use crate::error::{Error, Result};
use crate::spectrum::{ensure_same_grid, CrossSpectrum, MaskFlags, Spectrum, Units};
use crate::synth::{Channel, RunDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            // Periodic Hann, the usual choice for spectral analysis.
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }

    /// Overlap used by default for this window.
    pub fn default_overlap(self) -> f64 {
        match self {
            Window::Rectangular => 0.0,
            Window::Hann => 0.5,
        }
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rectangular" | "rect" | "boxcar" => Ok(Window::Rectangular),
            "hann" | "hanning" => Ok(Window::Hann),
            other => Err(Error::invalid(format!("unknown window `{other}`"))),
        }
    }
}

/// Splits a real time series into windowed, density-scaled FFT segments.
///
/// Returns `(bin_freqs, segments)` where bins run over `k = 1..=n/2` and each
/// segment is `n/2` complex amplitudes with `|X_k|²` equal to that segment's
/// one-sided periodogram in units²/Hz.
pub fn segment_time_series(
    x: &[f64],
    sample_rate: f64,
    segment_length: usize,
    window: Window,
    overlap: f64,
) -> Result<(Vec<f64>, Vec<Vec<Complex64>>)> {
    if segment_length < 2 || !segment_length.is_multiple_of(2) {
        return Err(Error::invalid("segment length must be even and >= 2"));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::invalid("sample rate must be > 0"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid("overlap must lie in [0, 1)"));
    }
    if x.len() < segment_length {
        return Err(Error::invalid(format!(
            "record of {} samples is shorter than one segment ({segment_length})",
            x.len()
        )));
    }
    let step = ((segment_length as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let w = window.coefficients(segment_length);
    let w_power: f64 = w.iter().map(|v| v * v).sum();
    let half = segment_length / 2;
    let scale: Vec<f64> = (1..=half)
        .map(|k| {
            let one_sided = if k == half { 1.0 } else { 2.0 };
            (one_sided / (sample_rate * w_power)).sqrt()
        })
        .collect();
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(segment_length);
    let mut segments = Vec::new();
    let mut start = 0;
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_length];
    while start + segment_length <= x.len() {
        for (b, (xi, wi)) in buf.iter_mut().zip(x[start..start + segment_length].iter().zip(&w)) {
            *b = Complex64::new(xi * wi, 0.0);
        }
        fft.process(&mut buf);
        segments.push((1..=half).map(|k| buf[k] * scale[k - 1]).collect());
        start += step;
    }
    let df = sample_rate / segment_length as f64;
    let freq = (1..=half).map(|k| k as f64 * df).collect();
    Ok((freq, segments))
}

/// Welch PSD of a single real time series.
pub fn welch_psd_time_series(
    x: &[f64],
    sample_rate: f64,
    segment_length: usize,
    window: Window,
    overlap: f64,
) -> Result<Spectrum> {
    let (freq, segs) = segment_time_series(x, sample_rate, segment_length, window, overlap)?;
    let n_bins = freq.len();
    let data: Vec<Complex64> = segs.into_iter().flatten().collect();
    let n_seg = data.len() / n_bins;
    let (mean, sigma) = reduce_bins(n_bins, n_seg, |seg, k| data[seg * n_bins + k].norm_sqr());
    Ok(Spectrum::new(freq, mean, Units::V2PerHz)?
        .with_averages(n_seg as u64)
        .with_uncertainty_opt(sigma))
}

impl RunDataset {
    /// Builds a dataset from three simultaneously sampled time series.
    pub fn from_time_series(
        f: &[f64],
        l: &[f64],
        m: &[f64],
        sample_rate: f64,
        segment_length: usize,
        window: Window,
    ) -> Result<RunDataset> {
        if f.len() != l.len() || l.len() != m.len() {
            return Err(Error::invalid("channels must have equal length"));
        }
        let overlap = window.default_overlap();
        let mut channels: [Vec<Complex64>; 3] = Default::default();
        let mut grid = Vec::new();
        let mut n_segments = 0;
        for (slot, x) in channels.iter_mut().zip([f, l, m]) {
            let (freq, segs) = segment_time_series(x, sample_rate, segment_length, window, overlap)?;
            n_segments = segs.len();
            grid = freq;
            *slot = segs.into_iter().flatten().collect();
        }
        Ok(RunDataset {
            config: None,
            rng_algorithm: String::new(),
            freq: grid,
            n_segments,
            units: Units::V2PerHz,
            channels,
            truth: None,
        })
    }
}

impl Spectrum {
    fn with_uncertainty_opt(mut self, sigma: Option<Vec<f64>>) -> Self {
        self.uncertainty = sigma;
        self
    }
}

/// Mean and standard error of `value(seg, k)` over segments, per bin.
fn reduce_bins(
    n_bins: usize,
    n_seg: usize,
    value: impl Fn(usize, usize) -> f64 + Sync,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let per_bin = |k: usize| {
        let mut sum = 0.0;
        for s in 0..n_seg {
            sum += value(s, k);
        }
        let mean = sum / n_seg as f64;
        let mut ss = 0.0;
        for s in 0..n_seg {
            let d = value(s, k) - mean;
            ss += d * d;
        }
        let se = if n_seg > 1 {
            (ss / (n_seg - 1) as f64 / n_seg as f64).sqrt()
        } else {
            f64::NAN
        };
        (mean, se)
    };
    #[cfg(feature = "parallel")]
    let stats: Vec<(f64, f64)> = {
        use rayon::prelude::*;
        (0..n_bins).into_par_iter().map(per_bin).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let stats: Vec<(f64, f64)> = (0..n_bins).map(per_bin).collect();
    let mean = stats.iter().map(|s| s.0).collect();
    let sigma = (n_seg > 1).then(|| stats.iter().map(|s| s.1).collect());
    (mean, sigma)
}

fn reduce_bins_complex(
    n_bins: usize,
    n_seg: usize,
    value: impl Fn(usize, usize) -> Complex64 + Sync,
) -> (Vec<Complex64>, Option<Vec<f64>>) {
    let per_bin = |k: usize| {
        let mut sum = Complex64::new(0.0, 0.0);
        for s in 0..n_seg {
            sum += value(s, k);
        }
        let mean = sum / n_seg as f64;
        let mut ss = 0.0;
        for s in 0..n_seg {
            let d = value(s, k).re - mean.re;
            ss += d * d;
        }
        let se = if n_seg > 1 {
            (ss / (n_seg - 1) as f64 / n_seg as f64).sqrt()
        } else {
            f64::NAN
        };
        (mean, se)
    };
    #[cfg(feature = "parallel")]
    let stats: Vec<(Complex64, f64)> = {
        use rayon::prelude::*;
        (0..n_bins).into_par_iter().map(per_bin).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let stats: Vec<(Complex64, f64)> = (0..n_bins).map(per_bin).collect();
    let mean = stats.iter().map(|s| s.0).collect();
    let sigma = (n_seg > 1).then(|| stats.iter().map(|s| s.1).collect());
    (mean, sigma)
}

/// Welch-averaged PSD of one channel.
pub fn welch_psd(ds: &RunDataset, ch: Channel) -> Result<Spectrum> {
    ds.validate()?;
    let n = ds.n_bins();
    let data = ds.channel(ch);
    let (mean, sigma) = reduce_bins(n, ds.n_segments, |s, k| data[s * n + k].norm_sqr());
    let mut out = Spectrum::new(ds.freq.clone(), mean, ds.units)?.with_averages(ds.n_segments as u64);
    out.uncertainty = sigma;
    Ok(out)
}

/// Welch-averaged CPSD `⟨X_A·conj(X_B)⟩`. The uncertainty is the standard
/// error of the real part.
pub fn welch_cpsd(ds: &RunDataset, a: Channel, b: Channel) -> Result<CrossSpectrum> {
    ds.validate()?;
    let n = ds.n_bins();
    let xa = ds.channel(a);
    let xb = ds.channel(b);
    let (mean, sigma) = reduce_bins_complex(n, ds.n_segments, |s, k| xa[s * n + k] * xb[s * n + k].conj());
    let mut out = CrossSpectrum::new(ds.freq.clone(), mean, ds.units)?;
    out.n_averages = ds.n_segments as u64;
    out.uncertainty = sigma;
    Ok(out)
}

/// CPSD of two separately segmented channels (e.g. two coincident sweeps).
pub fn cross_spectrum_of_segments(freq: &[f64], a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> Result<CrossSpectrum> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "segment counts differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("need at least one segment"));
    }
    if a.iter().chain(b).any(|s| s.len() != freq.len()) {
        return Err(Error::invalid("segment length does not match the grid"));
    }
    let (mean, sigma) = reduce_bins_complex(freq.len(), a.len(), |s, k| a[s][k] * b[s][k].conj());
    let mut out = CrossSpectrum::new(freq.to_vec(), mean, Units::V2PerHz)?;
    out.n_averages = a.len() as u64;
    out.uncertainty = sigma;
    Ok(out)
}

/// Magnitude-squared coherence `|S_FL|² / (S_FF·S_LL)`, clamped to [0, 1].
/// Bins with a zero or non-finite denominator are masked.
pub fn coherence(s_ff: &Spectrum, s_ll: &Spectrum, s_fl: &CrossSpectrum) -> Result<Spectrum> {
    ensure_same_grid(&s_ff.freq, &s_ll.freq, "coherence")?;
    ensure_same_grid(&s_ff.freq, &s_fl.freq, "coherence")?;
    let mut out = Spectrum::zeros(s_ff.freq.clone(), Units::Dimensionless)?;
    out.n_averages = s_fl.n_averages;
    for i in 0..out.len() {
        let den = s_ff.values[i] * s_ll.values[i];
        if !(den > 0.0) || !den.is_finite() || s_ff.is_masked(i) || s_ll.is_masked(i) {
            out.flag(i, MaskFlags::MASKED);
            continue;
        }
        let c = s_fl.values[i].norm_sqr() / den;
        if c > 1.0 {
            out.flag(i, MaskFlags::CLAMPED);
        }
        out.values[i] = c.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Unclamped `|S_AB|² / (S_AA·S_BB)` per bin, for Cauchy–Schwarz checks.
pub fn coherence_unclamped(s_aa: &Spectrum, s_bb: &Spectrum, s_ab: &CrossSpectrum) -> Vec<f64> {
    (0..s_aa.len())
        .map(|i| s_ab.values[i].norm_sqr() / (s_aa.values[i] * s_bb.values[i]))
        .collect()
}

/// `S_LL − Re(S_LM)`: shot plus electronics noise seen only by `PD_L`.
/// Negative bins are kept and flagged; the uncertainty combines the two
/// inputs' uncertainties in quadrature when both are present.
pub fn uncorrelated_noise_estimate(s_ll: &Spectrum, s_lm: &CrossSpectrum) -> Result<Spectrum> {
    ensure_same_grid(&s_ll.freq, &s_lm.freq, "uncorrelated-noise estimate")?;
    let values: Vec<f64> = s_ll
        .values
        .iter()
        .zip(&s_lm.values)
        .map(|(ll, lm)| ll - lm.re)
        .collect();
    let mut out = Spectrum::new(s_ll.freq.clone(), values, s_ll.units)?.with_averages(s_ll.n_averages);
    if let (Some(a), Some(b)) = (&s_ll.uncertainty, &s_lm.uncertainty) {
        out.uncertainty = Some(a.iter().zip(b).map(|(x, y)| x.hypot(*y)).collect());
    }
    flag_negative(&mut out);
    Ok(out)
}

/// Same estimate computed from the per-segment differences
/// `|A|² − Re(A·conj B)`, with the standard error of their mean.
pub fn uncorrelated_noise_from_segments(ds: &RunDataset, a: Channel, b: Channel) -> Result<Spectrum> {
    ds.validate()?;
    let n = ds.n_bins();
    let xa = ds.channel(a);
    let xb = ds.channel(b);
    let (mean, sigma) = reduce_bins(n, ds.n_segments, |s, k| {
        let x = xa[s * n + k];
        x.norm_sqr() - (x * xb[s * n + k].conj()).re
    });
    let mut out = Spectrum::new(ds.freq.clone(), mean, ds.units)?.with_averages(ds.n_segments as u64);
    out.uncertainty = sigma;
    flag_negative(&mut out);
    Ok(out)
}

fn flag_negative(s: &mut Spectrum) {
    for i in 0..s.len() {
        if s.values[i] < 0.0 {
            s.flag(i, MaskFlags::NEGATIVE);
        }
    }
}

/// Result of a ring-down fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingdownFit {
    pub q: f64,
    pub q_uncertainty: f64,
    /// 1/e amplitude decay time, s.
    pub tau: f64,
    pub tau_uncertainty: f64,
    /// RMS of the log-amplitude residuals.
    pub residual_rms: f64,
}

/// Fits `ln A = c − t/τ` by ordinary least squares and reports
/// `Q = π f0 τ` with its one-sigma uncertainty from the fit covariance.
pub fn fit_ringdown(times: &[f64], amplitudes: &[f64], f0: f64) -> Result<RingdownFit> {
    if times.len() != amplitudes.len() {
        return Err(Error::invalid("times and amplitudes differ in length"));
    }
    if times.len() < 10 {
        return Err(Error::invalid(format!(
            "ring-down fit needs at least 10 samples, got {}",
            times.len()
        )));
    }
    if !(f0 > 0.0) {
        return Err(Error::invalid("mode frequency must be > 0"));
    }
    if let Some(a) = amplitudes.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return Err(Error::invalid(format!("amplitudes must be > 0, got {a}")));
    }
    let n = times.len() as f64;
    let y: Vec<f64> = amplitudes.iter().map(|a| a.ln()).collect();
    let t_mean = times.iter().sum::<f64>() / n;
    let y_mean = y.iter().sum::<f64>() / n;
    let sxx: f64 = times.iter().map(|t| (t - t_mean).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("sample times must not all be equal"));
    }
    let sxy: f64 = times.iter().zip(&y).map(|(t, v)| (t - t_mean) * (v - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    if !(slope < 0.0) {
        return Err(Error::FitFailure(format!(
            "amplitude does not decay (log slope {slope:e} 1/s)"
        )));
    }
    let rss: f64 = times
        .iter()
        .zip(&y)
        .map(|(t, v)| (v - intercept - slope * t).powi(2))
        .sum();
    let slope_sigma = (rss / (n - 2.0) / sxx).sqrt();
    let tau = -1.0 / slope;
    let tau_sigma = slope_sigma / (slope * slope);
    let span =
        times.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - times.iter().cloned().fold(f64::INFINITY, f64::min);
    if span < tau {
        return Err(Error::invalid(format!(
            "record spans {span} s, less than one decay time ({tau} s)"
        )));
    }
    Ok(RingdownFit {
        q: PI * f0 * tau,
        q_uncertainty: PI * f0 * tau_sigma,
        tau,
        tau_uncertainty: tau_sigma,
        residual_rms: (rss / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bin_centred_tone_lands_in_one_bin() {
        let fs = 1024.0;
        let n = 256;
        let k0 = 37;
        let amp = 1.7;
        let x: Vec<f64> = (0..n * 8)
            .map(|i| amp * (2.0 * PI * k0 as f64 * i as f64 / n as f64).sin())
            .collect();
        let s = welch_psd_time_series(&x, fs, n, Window::Rectangular, 0.0).unwrap();
        let df = fs / n as f64;
        let total: f64 = s.values.iter().sum::<f64>() * df;
        assert_relative_eq!(total, amp * amp / 2.0, max_relative = 1e-9);
        let in_bin = s.values[k0 - 1] * df;
        assert_relative_eq!(in_bin, amp * amp / 2.0, max_relative = 1e-9);
    }

    #[test]
    fn zero_input_gives_zero_spectrum() {
        let x = vec![0.0; 1024];
        let s = welch_psd_time_series(&x, 100.0, 256, Window::Hann, 0.5).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ringdown_recovers_exact_decay() {
        let tau = 9.08;
        let f0 = 876.0;
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.15).collect();
        let a: Vec<f64> = t.iter().map(|t| 3.0 * (-t / tau).exp()).collect();
        let fit = fit_ringdown(&t, &a, f0).unwrap();
        assert_relative_eq!(fit.q, PI * f0 * tau, max_relative = 1e-10);
        assert!((fit.q / 25_000.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn ringdown_q_scales_with_tau() {
        let t: Vec<f64> = (0..100).map(|i| i as f64 * 0.5).collect();
        let fit = |tau: f64| {
            let a: Vec<f64> = t.iter().map(|t| (-t / tau).exp()).collect();
            fit_ringdown(&t, &a, 876.0).unwrap().q
        };
        assert_relative_eq!(fit(20.0), 2.0 * fit(10.0), max_relative = 1e-10);
    }

    #[test]
    fn ringdown_errors() {
        let t: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let growing: Vec<f64> = t.iter().map(|t| (t / 5.0).exp()).collect();
        assert!(matches!(fit_ringdown(&t, &growing, 876.0), Err(Error::FitFailure(_))));
        assert!(fit_ringdown(&t[..5], &growing[..5], 876.0).is_err());
        let mut bad = growing.clone();
        bad[3] = 0.0;
        assert!(fit_ringdown(&t, &bad, 876.0).is_err());
        let slow: Vec<f64> = t.iter().map(|t| (-t / 1000.0).exp()).collect();
        assert!(matches!(fit_ringdown(&t, &slow, 876.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn coherence_masks_empty_bins() {
        let f = vec![1.0, 2.0];
        let a = Spectrum::new(f.clone(), vec![1.0, 0.0], Units::V2PerHz).unwrap();
        let b = Spectrum::new(f.clone(), vec![1.0, 1.0], Units::V2PerHz).unwrap();
        let ab = CrossSpectrum::new(
            f,
            vec![Complex64::new(0.5, 0.5), Complex64::new(0.0, 0.0)],
            Units::V2PerHz,
        )
        .unwrap();
        let c = coherence(&a, &b, &ab).unwrap();
        assert_relative_eq!(c.values[0], 0.5);
        assert!(c.is_masked(1));
    }
}
