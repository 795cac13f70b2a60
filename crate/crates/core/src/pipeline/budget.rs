use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise_models::{qrpn_psd_free_mass, qrpn_suppression_factor, sql_psd, thermal_psd};
use crate::spectrum::{validate_grid, Spectrum, Units};
use crate::spring_loop::{feedback_gain, optical_spring_gain};
use crate::synth::RunConfig;

use super::CalibrationConstant;

/// Which calibration the referred detector noise is modelled for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetVariant {
    /// Shot and electronics noise enter as `2K²S/|G_os|²`.
    S0,
    /// They enter scaled by `−Re(G_fb)`, the residue left in `Re(S_LM)`.
    S1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Thermal,
    QrpnSuppressed,
    QrpnUnsuppressed,
    ShotReferred,
    ElectronicsReferred,
    LfnResidual,
    Sql,
}

impl ComponentKind {
    pub fn name(self) -> &'static str {
        match self {
            ComponentKind::Thermal => "thermal",
            ComponentKind::QrpnSuppressed => "qrpn_suppressed",
            ComponentKind::QrpnUnsuppressed => "qrpn_unsuppressed",
            ComponentKind::ShotReferred => "shot_referred",
            ComponentKind::ElectronicsReferred => "electronics_referred",
            ComponentKind::LfnResidual => "lfn_residual",
            ComponentKind::Sql => "sql",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetComponent {
    pub kind: ComponentKind,
    pub spectrum: Spectrum,
    /// Whether the component is summed into the total. Only one of the two
    /// radiation-pressure curves is; the SQL never is.
    pub in_total: bool,
}

/// Model noise curves for one run, all in free-mass m²/Hz on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBudget {
    pub run: String,
    pub variant: BudgetVariant,
    pub freq: Vec<f64>,
    pub components: Vec<BudgetComponent>,
    pub total: Spectrum,
    pub measured: Option<Spectrum>,
}

impl NoiseBudget {
    pub fn component(&self, kind: ComponentKind) -> &BudgetComponent {
        self.components
            .iter()
            .find(|c| c.kind == kind)
            .expect("every budget carries all component kinds")
    }

    /// Radiation-pressure curve that is part of the total.
    pub fn qrpn_in_total(&self) -> &Spectrum {
        let s = self.component(ComponentKind::QrpnSuppressed);
        if s.in_total {
            &s.spectrum
        } else {
            &self.component(ComponentKind::QrpnUnsuppressed).spectrum
        }
    }
}

/// Assembles the model budget of `cfg` on `grid`, calibrated with `k`.
///
/// `lfn_residual` is the bias the `PD_F` electronics noise leaves in the
/// calibrated spectrum: with `X = S_f/K²` in `PD_F` and electronics `E`, the
/// coherence is underestimated by `X/(X+E)`, and
/// `K²E[(2X+E)·S/(X·S_f,L) − 1]` is what that adds.
pub fn build_noise_budget(
    cfg: &RunConfig,
    k: &CalibrationConstant,
    grid: &[f64],
    variant: BudgetVariant,
) -> Result<NoiseBudget> {
    cfg.validate()?;
    k.validate()?;
    validate_grid(grid)?;
    let n = grid.len();
    let zeros = || Spectrum::zeros(grid.to_vec(), Units::M2PerHz);

    let thermal = if cfg.thermal_enabled {
        thermal_psd(&cfg.modeset, grid)?
    } else {
        zeros()?
    };
    let (q_sup, q_unsup) = if cfg.qrpn_enabled {
        let q = qrpn_psd_free_mass(&cfg.optical, grid)?;
        let os = cfg.loop_model.spring.os_freq;
        let sup = q.map_values(Units::M2PerHz, |f, v| {
            let s = qrpn_suppression_factor(f, os);
            v * s * s
        });
        (sup, q)
    } else {
        (zeros()?, zeros()?)
    };

    let gain = optical_spring_gain(&cfg.loop_model.spring, grid)?;
    let fb = feedback_gain(&cfg.loop_model, grid)?;
    let k2 = k.k_m * k.k_m;
    let shot_v = cfg.detection.shot_psd(cfg.detection.power_l, cfg.optical.wavelength)?;
    let el_v = cfg.detection.electronics_l;
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let base = 2.0 * k2 / gain.values[i].norm_sqr();
            match variant {
                BudgetVariant::S0 => base,
                BudgetVariant::S1 => -fb.values[i].re * base,
            }
        })
        .collect();
    let shot = Spectrum::new(
        grid.to_vec(),
        scale.iter().map(|s| s * shot_v).collect(),
        Units::M2PerHz,
    )?;
    let electronics = Spectrum::new(grid.to_vec(), scale.iter().map(|s| s * el_v).collect(), Units::M2PerHz)?;

    let q_used = if cfg.qrpn_suppression { &q_sup } else { &q_unsup };
    let e = cfg.detection.electronics_f;
    let lfn_residual: Vec<f64> = (0..n)
        .map(|i| {
            let sf = cfg.lfn.psd(grid[i]);
            if e == 0.0 || sf == 0.0 {
                return 0.0;
            }
            let x = sf / k2;
            // Cavity-local noise over LFN as seen by the calibration: S/S_f.
            let local = thermal.values[i] + q_used.values[i] + shot.values[i] + electronics.values[i];
            let ratio = (sf + local) / sf;
            k2 * e * ((2.0 * x + e) / x * ratio - 1.0)
        })
        .collect();
    let lfn_residual = Spectrum::new(grid.to_vec(), lfn_residual, Units::M2PerHz)?;
    let sql = sql_psd(cfg.optical.reduced_mass, grid)?;

    let components = vec![
        BudgetComponent {
            kind: ComponentKind::Thermal,
            spectrum: thermal,
            in_total: true,
        },
        BudgetComponent {
            kind: ComponentKind::QrpnSuppressed,
            spectrum: q_sup,
            in_total: cfg.qrpn_suppression,
        },
        BudgetComponent {
            kind: ComponentKind::QrpnUnsuppressed,
            spectrum: q_unsup,
            in_total: !cfg.qrpn_suppression,
        },
        BudgetComponent {
            kind: ComponentKind::ShotReferred,
            spectrum: shot,
            in_total: true,
        },
        BudgetComponent {
            kind: ComponentKind::ElectronicsReferred,
            spectrum: electronics,
            in_total: true,
        },
        BudgetComponent {
            kind: ComponentKind::LfnResidual,
            spectrum: lfn_residual,
            in_total: true,
        },
        BudgetComponent {
            kind: ComponentKind::Sql,
            spectrum: sql,
            in_total: false,
        },
    ];
    let mut total = vec![0.0; n];
    for c in components.iter().filter(|c| c.in_total) {
        for (t, v) in total.iter_mut().zip(&c.spectrum.values) {
            *t += v;
        }
    }
    if let Some(i) = total.iter().position(|v| !v.is_finite()) {
        return Err(Error::ModelEvaluation(format!(
            "budget total is not finite at {} Hz",
            grid[i]
        )));
    }
    Ok(NoiseBudget {
        run: cfg.name.clone(),
        variant,
        freq: grid.to_vec(),
        components,
        total: Spectrum::new(grid.to_vec(), total, Units::M2PerHz)?,
        measured: None,
    })
}

/// Mean of the unmasked values of `spec` inside `[lo, hi]`.
pub fn band_average(spec: &Spectrum, lo: f64, hi: f64) -> Result<f64> {
    let (sum, count) = (0..spec.len())
        .filter(|&i| spec.freq[i] >= lo && spec.freq[i] <= hi && !spec.is_masked(i))
        .fold((0.0, 0usize), |(s, c), i| (s + spec.values[i], c + 1));
    if count == 0 {
        return Err(Error::invalid(format!("band {lo}..{hi} Hz has no usable bins")));
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn grid(cfg: &RunConfig) -> Vec<f64> {
        cfg.bin_freqs()
    }

    #[test]
    fn total_is_sum_of_parts() {
        for cfg in presets::spring_runs() {
            for variant in [BudgetVariant::S0, BudgetVariant::S1] {
                let b = build_noise_budget(&cfg, &cfg.calibration, &grid(&cfg), variant).unwrap();
                for i in 0..b.freq.len() {
                    let sum: f64 = b
                        .components
                        .iter()
                        .filter(|c| c.in_total)
                        .map(|c| c.spectrum.values[i])
                        .sum();
                    assert!((b.total.values[i] - sum).abs() <= 1e-12 * sum.abs());
                }
            }
        }
    }

    #[test]
    fn thermal_only_total_is_thermal() {
        let mut cfg = presets::five_db_run(1);
        cfg.lfn = crate::synth::LfnModel::off();
        let b = build_noise_budget(&cfg, &cfg.calibration, &grid(&cfg), BudgetVariant::S0).unwrap();
        assert_eq!(b.total.values, b.component(ComponentKind::Thermal).spectrum.values);
    }

    #[test]
    fn integrator_leaves_no_uncorrelated_noise_in_s1() {
        let cfg = presets::spring_run_named("os69").unwrap();
        let b = build_noise_budget(&cfg, &cfg.calibration, &grid(&cfg), BudgetVariant::S1).unwrap();
        assert!(b
            .component(ComponentKind::ShotReferred)
            .spectrum
            .values
            .iter()
            .all(|v| v.abs() < 1e-300 || *v == 0.0));
    }

    #[test]
    fn band_average_needs_bins() {
        let s = Spectrum::new(vec![1.0, 2.0], vec![1.0, 3.0], Units::M2PerHz).unwrap();
        assert_eq!(band_average(&s, 0.0, 10.0).unwrap(), 2.0);
        assert!(band_average(&s, 5.0, 10.0).is_err());
    }
}
