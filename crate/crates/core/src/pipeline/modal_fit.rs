use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constants::TWO_PI;
use crate::error::{Error, Result};
use crate::noise_models::{mode_thermal_psd, ModeSet};
use crate::spectrum::Spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalFitOptions {
    /// Also fit each resonance frequency, within ±10% of its initial value.
    pub fit_frequencies: bool,
    /// Half-width of each fit window in linewidths (`f_k·φ_k`).
    pub window_linewidths: f64,
    /// Lower bound on the half-width in bins.
    pub min_window_bins: usize,
    pub max_iterations: usize,
}

impl Default for ModalFitOptions {
    fn default() -> Self {
        ModalFitOptions {
            fit_frequencies: false,
            window_linewidths: 5.0,
            min_window_bins: 5,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalFit {
    pub modeset: ModeSet,
    /// 1σ per mode, kg.
    pub mass_uncertainty: Vec<f64>,
    /// 1σ per mode, Hz; zero when frequencies were held fixed.
    pub freq_uncertainty: Vec<f64>,
    /// RMS of `ln(model/measured)` over the fitted bins.
    pub residual_log_rms: f64,
    pub n_bins: usize,
    pub iterations: usize,
}

const FREQ_RANGE: f64 = 0.1;

/// Fits the modal masses (and optionally frequencies) of `init` to a
/// measured thermal spectrum by least squares on `ln S` in windows around
/// each resonance inside `band`.
pub fn fit_modal_masses(
    measured: &Spectrum,
    init: &ModeSet,
    band: (f64, f64),
    opts: &ModalFitOptions,
) -> Result<ModalFit> {
    init.validate()?;
    let (lo, hi) = band;
    if !(hi > lo) {
        return Err(Error::invalid(format!("fit band {lo}..{hi} Hz is empty")));
    }
    let usable = |i: usize| {
        let f = measured.freq[i];
        f >= lo && f <= hi && !measured.is_masked(i) && measured.values[i] > 0.0
    };

    let mut selected = vec![false; measured.len()];
    for (k, mode) in init.modes.iter().enumerate() {
        let f0 = mode.resonance_freq_hz();
        let search: Vec<usize> = (0..measured.len())
            .filter(|&i| usable(i) && (measured.freq[i] - f0).abs() <= FREQ_RANGE * f0)
            .collect();
        let not_found = Error::ModeNotFound { index: k, freq_hz: f0 };
        if search.len() < 3 {
            return Err(not_found);
        }
        let peak = *search
            .iter()
            .max_by(|&&a, &&b| measured.values[a].total_cmp(&measured.values[b]))
            .unwrap();
        if peak == search[0] || peak == *search.last().unwrap() {
            return Err(not_found);
        }
        let fp = measured.freq[peak];
        let linewidth = fp * init.mode_loss_angle(k);
        let half = (opts.window_linewidths * linewidth).max(opts.min_window_bins as f64 * measured.bin_width());
        for (i, sel) in selected.iter_mut().enumerate() {
            if usable(i) && (measured.freq[i] - fp).abs() <= half {
                *sel = true;
            }
        }
    }
    let bins: Vec<usize> = (0..measured.len()).filter(|&i| selected[i]).collect();
    let n_modes = init.modes.len();
    let n_par = if opts.fit_frequencies { 2 * n_modes } else { n_modes };
    if bins.len() <= n_par {
        return Err(Error::FitFailure(format!(
            "{} bins in the fit windows for {n_par} parameters",
            bins.len()
        )));
    }

    let freq: Vec<f64> = bins.iter().map(|&i| measured.freq[i]).collect();
    let target: Vec<f64> = bins.iter().map(|&i| measured.values[i].ln()).collect();
    let w0: Vec<f64> = init.modes.iter().map(|m| m.resonance_angular_freq).collect();
    let m0: Vec<f64> = init.modes.iter().map(|m| m.modal_mass).collect();

    // Parameters: ln(m_k/m0_k), then ln(ω_k/ω0_k) when frequencies are free.
    let unpack = |p: &DVector<f64>| -> (Vec<f64>, Vec<f64>) {
        let masses = (0..n_modes).map(|k| m0[k] * p[k].exp()).collect();
        let omegas = (0..n_modes)
            .map(|k| {
                if opts.fit_frequencies {
                    w0[k] * p[n_modes + k].exp()
                } else {
                    w0[k]
                }
            })
            .collect();
        (masses, omegas)
    };
    let model = |masses: &[f64], omegas: &[f64], i: usize| -> Vec<f64> {
        let w = TWO_PI * freq[i];
        (0..n_modes)
            .map(|k| mode_thermal_psd(masses[k], omegas[k], init.mode_loss_angle(k), init.temperature, w))
            .collect()
    };
    let evaluate = |p: &DVector<f64>| -> (DVector<f64>, DMatrix<f64>) {
        let (masses, omegas) = unpack(p);
        let mut r = DVector::zeros(freq.len());
        let mut j = DMatrix::zeros(freq.len(), n_par);
        for i in 0..freq.len() {
            let parts = model(&masses, &omegas, i);
            let total: f64 = parts.iter().sum();
            r[i] = total.ln() - target[i];
            for k in 0..n_modes {
                // S_k ∝ 1/m_k, so d ln S / d ln m_k = −S_k/S.
                j[(i, k)] = -parts[k] / total;
            }
            if opts.fit_frequencies {
                let w = TWO_PI * freq[i];
                for k in 0..n_modes {
                    let wk = omegas[k];
                    let phi = init.mode_loss_angle(k);
                    // S_k = A·ωk·φ/((ωk²−ω²)² + ω²ωk²φ²); differentiate in ln ωk.
                    let d = (wk * wk - w * w).powi(2) + w * w * wk * wk * phi * phi;
                    let dd = 4.0 * (wk * wk - w * w) * wk * wk + 2.0 * w * w * wk * wk * phi * phi;
                    let dln = 1.0 - dd / d;
                    j[(i, n_modes + k)] = parts[k] / total * dln;
                }
            }
        }
        (r, j)
    };

    let mut p = DVector::zeros(n_par);
    let (mut r, mut jac) = evaluate(&p);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let bound = (1.0 + FREQ_RANGE).ln();
    while iterations < opts.max_iterations {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut a = jtj.clone();
        for d in 0..n_par {
            a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
        }
        let step = match a.cholesky() {
            Some(ch) => ch.solve(&(-&jtr)),
            None => {
                lambda *= 10.0;
                continue;
            }
        };
        let mut trial = &p + &step;
        if opts.fit_frequencies {
            for k in 0..n_modes {
                trial[n_modes + k] = trial[n_modes + k].clamp(-bound, bound);
            }
        }
        let (tr, tj) = evaluate(&trial);
        let tcost = tr.norm_squared();
        if tcost.is_finite() && tcost <= cost {
            let converged = (cost - tcost) <= 1e-15 * cost.max(1e-300) || step.amax() < 1e-12;
            p = trial;
            r = tr;
            jac = tj;
            cost = tcost;
            lambda = (lambda / 10.0).max(1e-12);
            if converged {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }

    let dof = (freq.len() - n_par) as f64;
    let s2 = cost / dof;
    let cov = (jac.transpose() * &jac)
        .try_inverse()
        .ok_or_else(|| Error::FitFailure("normal matrix is singular".into()))?
        * s2;
    let (masses, omegas) = unpack(&p);
    let mut modeset = init.clone();
    for k in 0..n_modes {
        modeset.modes[k].modal_mass = masses[k];
        modeset.modes[k].resonance_angular_freq = omegas[k];
    }
    let mass_uncertainty = (0..n_modes).map(|k| masses[k] * cov[(k, k)].max(0.0).sqrt()).collect();
    let freq_uncertainty = (0..n_modes)
        .map(|k| {
            if opts.fit_frequencies {
                omegas[k] / TWO_PI * cov[(n_modes + k, n_modes + k)].max(0.0).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let residual_log_rms = (cost / freq.len() as f64).sqrt();
    if !residual_log_rms.is_finite() {
        return Err(Error::FitFailure("non-finite residuals".into()));
    }
    Ok(ModalFit {
        modeset,
        mass_uncertainty,
        freq_uncertainty,
        residual_log_rms,
        n_bins: freq.len(),
        iterations,
    })
}
