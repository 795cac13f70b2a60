//! Calibration and subtraction chain.
//!
//! The frequency-noise reference `PD_F` is coherent with the cavity
//! detector, so the coherence `C = |S_FL|²/(S_FF·S_LL)` measures how much of
//! `PD_L` is frequency noise. `S0 = K_m²·S_FF·(1 − C)/C` is then everything in
//! `PD_L` that is not frequency noise, calibrated into free-mass displacement.
//! Replacing `S_LL` with `Re(S_LM)` gives `S1`, in which the shot and
//! electronics noise that `PD_L` and `PD_M` do not share has averaged away.

mod budget;
mod modal_fit;

pub use budget::{band_average, build_noise_budget, BudgetComponent, BudgetVariant, ComponentKind, NoiseBudget};
pub use modal_fit::{fit_modal_masses, ModalFit, ModalFitOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{coherence, welch_cpsd, welch_psd};
use crate::noise_models::sql_psd;
use crate::spectrum::{ensure_same_grid, CrossSpectrum, MaskFlags, Spectrum, Units};
use crate::synth::{truth, Channel, RunDataset};

/// Coherence below which a bin is excluded from calibration.
pub const COHERENCE_FLOOR: f64 = 1e-4;

/// Conversion from `PD_F` detector units to free-mass displacement, m/V.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConstant {
    pub k_m: f64,
    #[serde(default)]
    pub provenance: String,
}

impl CalibrationConstant {
    pub fn new(k_m: f64, provenance: impl Into<String>) -> Result<Self> {
        let k = CalibrationConstant {
            k_m,
            provenance: provenance.into(),
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_m > 0.0 && self.k_m.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "calibration constant must be > 0, got {}",
                self.k_m
            )))
        }
    }
}

/// `S0 = K_m²·S_FF·(1 − C)/C`, masking bins with `C` below `floor`.
pub fn calibrate_s0_with_floor(s_ff: &Spectrum, c: &Spectrum, k: &CalibrationConstant, floor: f64) -> Result<Spectrum> {
    k.validate()?;
    ensure_same_grid(&s_ff.freq, &c.freq, "S0 calibration")?;
    let k2 = k.k_m * k.k_m;
    let mut out = Spectrum::zeros(s_ff.freq.clone(), Units::M2PerHz)?.with_averages(s_ff.n_averages);
    for i in 0..out.len() {
        let ci = c.values[i];
        if c.is_masked(i) || s_ff.is_masked(i) || !(ci >= floor) {
            out.flag(i, MaskFlags::MASKED);
            continue;
        }
        out.values[i] = k2 * s_ff.values[i] * (1.0 - ci) / ci;
    }
    Ok(out)
}

pub fn calibrate_s0(s_ff: &Spectrum, c: &Spectrum, k: &CalibrationConstant) -> Result<Spectrum> {
    calibrate_s0_with_floor(s_ff, c, k, COHERENCE_FLOOR)
}

/// `S0` from the raw spectra, with the statistical uncertainty of `S_LL`
/// propagated to first order.
pub fn calibrate_s0_from_spectra(
    s_ff: &Spectrum,
    s_ll: &Spectrum,
    s_fl: &CrossSpectrum,
    k: &CalibrationConstant,
) -> Result<Spectrum> {
    let c = coherence(s_ff, s_ll, s_fl)?;
    let mut s0 = calibrate_s0(s_ff, &c, k)?;
    if let Some(sigma) = &s_ll.uncertainty {
        s0.uncertainty = Some(propagate(s_ff, s_fl, sigma, k, &s0.mask));
    }
    Ok(s0)
}

fn propagate(
    s_ff: &Spectrum,
    s_fl: &CrossSpectrum,
    sigma: &[f64],
    k: &CalibrationConstant,
    mask: &[MaskFlags],
) -> Vec<f64> {
    let k2 = k.k_m * k.k_m;
    (0..s_ff.len())
        .map(|i| {
            if mask[i].is_masked() {
                0.0
            } else {
                k2 * s_ff.values[i].powi(2) / s_fl.values[i].norm_sqr() * sigma[i]
            }
        })
        .collect()
}

/// `S1`: the `S0` recipe with `Re(S_LM)` in place of `S_LL`.
///
/// Bins where `Re(S_LM) <= 0` or the substituted coherence falls below
/// `floor` are masked; negative results are kept and flagged.
pub fn calibrate_s1_with_floor(
    s_ff: &Spectrum,
    s_lm: &CrossSpectrum,
    s_fl: &CrossSpectrum,
    k: &CalibrationConstant,
    floor: f64,
) -> Result<Spectrum> {
    k.validate()?;
    ensure_same_grid(&s_ff.freq, &s_lm.freq, "S1 calibration")?;
    ensure_same_grid(&s_ff.freq, &s_fl.freq, "S1 calibration")?;
    let k2 = k.k_m * k.k_m;
    let mut out = Spectrum::zeros(s_ff.freq.clone(), Units::M2PerHz)?.with_averages(s_lm.n_averages);
    for i in 0..out.len() {
        let re_lm = s_lm.values[i].re;
        let ff = s_ff.values[i];
        if s_ff.is_masked(i) || !(re_lm > 0.0) || !(ff > 0.0) {
            out.flag(i, MaskFlags::MASKED);
            continue;
        }
        let c = s_fl.values[i].norm_sqr() / (ff * re_lm);
        if !(c >= floor) || !c.is_finite() {
            out.flag(i, MaskFlags::MASKED);
            continue;
        }
        out.values[i] = k2 * ff * (1.0 - c) / c;
        if out.values[i] < 0.0 {
            out.flag(i, MaskFlags::NEGATIVE);
        }
    }
    if out.n_unmasked() == 0 {
        return Err(Error::EmptyResult(
            "every S1 bin is masked (no positive Re(S_LM) with usable coherence)".into(),
        ));
    }
    if let Some(sigma) = &s_lm.uncertainty {
        out.uncertainty = Some(propagate(s_ff, s_fl, sigma, k, &out.mask));
    }
    Ok(out)
}

pub fn calibrate_s1(
    s_ff: &Spectrum,
    s_lm: &CrossSpectrum,
    s_fl: &CrossSpectrum,
    k: &CalibrationConstant,
) -> Result<Spectrum> {
    calibrate_s1_with_floor(s_ff, s_lm, s_fl, k, COHERENCE_FLOOR)
}

/// `sqrt(S / S_SQL)` per bin. Negative inputs give a negative ratio of the
/// same magnitude and keep their flag.
pub fn normalize_to_sql(spec: &Spectrum, reduced_mass: f64) -> Result<Spectrum> {
    let sql = sql_psd(reduced_mass, &spec.freq)?;
    let mut out = spec.map_values(Units::Dimensionless, |_, v| v);
    for i in 0..out.len() {
        let v = spec.values[i];
        out.values[i] = v.signum() * (v.abs() / sql.values[i]).sqrt();
        if v < 0.0 {
            out.flag(i, MaskFlags::NEGATIVE);
        }
    }
    if let Some(u) = &spec.uncertainty {
        out.uncertainty = Some(
            (0..spec.len())
                .map(|i| {
                    let v = spec.values[i].abs();
                    if v > 0.0 {
                        u[i] / (2.0 * (v * sql.values[i]).sqrt())
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
    }
    Ok(out)
}

/// `measured − model`; negative bins are kept and flagged.
pub fn subtract_model(measured: &Spectrum, model: &Spectrum) -> Result<Spectrum> {
    if measured.units != model.units {
        return Err(Error::invalid(format!(
            "cannot subtract {} from {}",
            model.units, measured.units
        )));
    }
    ensure_same_grid(&measured.freq, &model.freq, "model subtraction")?;
    let mut out = measured.clone();
    for i in 0..out.len() {
        out.values[i] = measured.values[i] - model.values[i];
        out.mask[i] |= model.mask[i];
        if out.values[i] < 0.0 {
            out.flag(i, MaskFlags::NEGATIVE);
        }
    }
    Ok(out)
}

/// Plotting view: values below `floor` raised to `floor` and flagged.
pub fn clamped_view(spec: &Spectrum, floor: f64) -> Spectrum {
    let mut out = spec.clone();
    for i in 0..out.len() {
        if out.values[i] < floor {
            out.values[i] = floor;
            out.flag(i, MaskFlags::CLAMPED);
        }
    }
    out
}

/// Per-bin weighted mean of several estimates.
///
/// With explicit `weights` (one per estimate) those are used; otherwise
/// inverse-variance weights when every estimate carries uncertainties, and
/// uniform weights when none do. Masked bins are skipped per estimate.
pub fn average_runs(estimates: &[Spectrum], weights: Option<&[f64]>) -> Result<Spectrum> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::invalid("need at least one estimate to average"))?;
    for e in &estimates[1..] {
        ensure_same_grid(&first.freq, &e.freq, "run averaging")?;
        if e.units != first.units {
            return Err(Error::invalid("estimates have different units"));
        }
    }
    if let Some(w) = weights {
        if w.len() != estimates.len() {
            return Err(Error::invalid("one weight per estimate is required"));
        }
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::invalid("weights must be >= 0"));
        }
    }
    let inverse_variance = weights.is_none() && estimates.iter().all(|e| e.uncertainty.is_some());
    let any_sigma = estimates.iter().all(|e| e.uncertainty.is_some());
    let n = first.len();
    let mut out = Spectrum::zeros(first.freq.clone(), first.units)?;
    out.n_averages = estimates.iter().map(|e| e.n_averages).sum();
    let mut sigma = vec![0.0; n];
    for i in 0..n {
        let live: Vec<&Spectrum> = estimates.iter().filter(|e| !e.is_masked(i)).collect();
        if live.is_empty() {
            out.flag(i, MaskFlags::MASKED);
            continue;
        }
        let w: Vec<f64> = if inverse_variance {
            let s: Vec<f64> = live.iter().map(|e| e.uncertainty.as_ref().unwrap()[i]).collect();
            if s.contains(&0.0) {
                s.iter().map(|x| if *x == 0.0 { 1.0 } else { 0.0 }).collect()
            } else {
                s.iter().map(|x| 1.0 / (x * x)).collect()
            }
        } else if let Some(w) = weights {
            estimates
                .iter()
                .zip(w)
                .filter(|(e, _)| !e.is_masked(i))
                .map(|(_, w)| *w)
                .collect()
        } else {
            vec![1.0; live.len()]
        };
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            out.flag(i, MaskFlags::MASKED);
            continue;
        }
        let mut mean = 0.0;
        let mut var = 0.0;
        for (e, wi) in live.iter().zip(&w) {
            let f = wi / total;
            mean += f * e.values[i];
            if let Some(u) = &e.uncertainty {
                var += f * f * u[i] * u[i];
            }
            out.mask[i] |= e.mask[i];
        }
        out.values[i] = mean;
        sigma[i] = var.sqrt();
        if mean < 0.0 {
            out.flag(i, MaskFlags::NEGATIVE);
        } else {
            out.mask[i] = MaskFlags(out.mask[i].0 & !MaskFlags::NEGATIVE.0);
        }
    }
    if out.n_unmasked() == 0 {
        return Err(Error::EmptyResult("no bin is unmasked in any estimate".into()));
    }
    if any_sigma {
        out.uncertainty = Some(sigma);
    }
    Ok(out)
}

/// Deepest point of an SQL ratio inside a band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqlDepth {
    /// `20·log10(min ratio)`; negative is below the SQL.
    pub min_ratio_db: f64,
    pub at_freq: f64,
}

/// Minimum of an amplitude ratio to the SQL inside `[lo, hi]`, in dB.
/// Masked, negative and non-finite bins are ignored.
pub fn db_below_sql(ratio: &Spectrum, band: (f64, f64)) -> Result<SqlDepth> {
    let (lo, hi) = band;
    let best = (0..ratio.len())
        .filter(|&i| ratio.freq[i] >= lo && ratio.freq[i] <= hi)
        .filter(|&i| {
            !ratio.is_masked(i)
                && !ratio.mask[i].contains(MaskFlags::NEGATIVE)
                && ratio.values[i] > 0.0
                && ratio.values[i].is_finite()
        })
        .min_by(|&a, &b| ratio.values[a].total_cmp(&ratio.values[b]));
    match best {
        Some(i) => Ok(SqlDepth {
            min_ratio_db: 20.0 * ratio.values[i].log10(),
            at_freq: ratio.freq[i],
        }),
        None => Err(Error::invalid(format!("band {lo}..{hi} Hz has no usable bins"))),
    }
}

/// Every spectrum produced from one dataset.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub s_ff: Spectrum,
    pub s_ll: Spectrum,
    pub s_mm: Spectrum,
    pub s_fl: CrossSpectrum,
    pub s_lm: CrossSpectrum,
    pub coherence: Spectrum,
    pub s0: Spectrum,
    /// `None` when every bin had to be masked.
    pub s1: Option<Spectrum>,
    pub uncorrelated: Spectrum,
    pub degenerate: bool,
}

/// Runs the Welch estimates and both calibrations over a dataset. When the
/// dataset carries its configuration, bins at and above the optical-spring
/// frequency are flagged unreliable in `S1`.
pub fn analyze(ds: &RunDataset, k: &CalibrationConstant) -> Result<Analysis> {
    let s_ff = welch_psd(ds, Channel::F)?;
    let s_ll = welch_psd(ds, Channel::L)?;
    let s_mm = welch_psd(ds, Channel::M)?;
    let s_fl = welch_cpsd(ds, Channel::F, Channel::L)?;
    let s_lm = welch_cpsd(ds, Channel::L, Channel::M)?;
    let degenerate = [&s_ff, &s_ll, &s_mm].iter().all(|s| s.values.iter().all(|v| *v == 0.0));
    let c = coherence(&s_ff, &s_ll, &s_fl)?;
    let s0 = if degenerate {
        Spectrum::zeros(ds.freq.clone(), Units::M2PerHz)?.with_averages(ds.n_segments as u64)
    } else {
        calibrate_s0_from_spectra(&s_ff, &s_ll, &s_fl, k)?
    };
    let mut s1 = if degenerate {
        Some(Spectrum::zeros(ds.freq.clone(), Units::M2PerHz)?.with_averages(ds.n_segments as u64))
    } else {
        match calibrate_s1(&s_ff, &s_lm, &s_fl, k) {
            Ok(s) => Some(s),
            Err(Error::EmptyResult(_)) => None,
            Err(e) => return Err(e),
        }
    };
    if let (Some(s1), Some(cfg)) = (s1.as_mut(), ds.config.as_ref()) {
        s1.flag_unreliable_above(cfg.loop_model.spring.os_freq);
    }
    let uncorrelated = crate::estimator::uncorrelated_noise_from_segments(ds, Channel::L, Channel::M)?;
    Ok(Analysis {
        s_ff,
        s_ll,
        s_mm,
        s_fl,
        s_lm,
        coherence: c,
        s0,
        s1,
        uncorrelated,
        degenerate,
    })
}

type DetectorSpectra = (
    Vec<f64>,
    Vec<f64>,
    Vec<num_complex::Complex64>,
    Vec<num_complex::Complex64>,
);

/// Exact ensemble-average detector spectra implied by a truth set, in
/// detector units: `(S_FF, S_LL, S_FL, S_LM)`.
pub fn expected_detector_spectra(t: &crate::synth::TruthSet, k: &CalibrationConstant) -> Result<DetectorSpectra> {
    use num_complex::Complex64;
    let n = t.freq.len();
    let k2 = k.k_m * k.k_m;
    let th = t.values(truth::THERMAL_FM)?;
    let rp = t.values(truth::QRPN_FM_INJECTED)?;
    let lfn = t.values(truth::LFN_FM)?;
    let shot = t.values(truth::SHOT_L)?;
    let el_l = t.values(truth::ELECTRONICS_L)?;
    let el_f = t.values(truth::ELECTRONICS_F)?;
    let g2 = t.values(truth::SPRING_GAIN_SQ)?;
    let a2 = t.values(truth::CLOSED_LOOP_SQ)?;
    let gre = t.values(truth::FEEDBACK_RE)?;
    let gim = t.values(truth::FEEDBACK_IM)?;
    let mut ff = Vec::with_capacity(n);
    let mut ll = Vec::with_capacity(n);
    let mut fl = Vec::with_capacity(n);
    let mut lm = Vec::with_capacity(n);
    for i in 0..n {
        // Displacement content of PD_L/PD_M before the loop, detector units.
        let disp = g2[i] * (th[i] + rp[i] + lfn[i]) / (2.0 * k2);
        let unc = shot[i] + el_l[i];
        ff.push(lfn[i] / k2 + el_f[i]);
        ll.push(a2[i] * (disp + unc));
        // |S_FL| only; its phase is that of conj(G_os/(1+G_fb)).
        fl.push(Complex64::new(
            (lfn[i] / k2 * a2[i] * g2[i] * lfn[i] / (2.0 * k2)).sqrt(),
            0.0,
        ));
        let g = Complex64::new(gre[i], gim[i]);
        lm.push(a2[i] * (Complex64::new(disp, 0.0) - g.conj() * unc));
    }
    Ok((ff, ll, fl, lm))
}
