//! JSON analysis and budget reports.

use serde::Serialize;

use crate::error::Result;
use crate::pipeline::{db_below_sql, normalize_to_sql, Analysis, ComponentKind, NoiseBudget, SqlDepth};
use crate::spectrum::{MaskFlags, Spectrum};
use crate::synth::RunDataset;

#[derive(Debug, Clone, Serialize)]
pub struct BandResidual {
    pub spectrum: String,
    pub band_hz: [f64; 2],
    pub n_bins: usize,
    pub n_within_tolerance: usize,
    pub tolerance: f64,
    pub max_abs_relative: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Cancellation {
    /// Mean of `10·log10(S1/S0)` over unmasked positive bins in the band.
    pub mean_s1_over_s0_db: f64,
    /// Expected depth of the uncorrelated-noise floor after averaging,
    /// `−5·log10(N)` dB.
    pub averaging_limit_db: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub run: Option<String>,
    pub seed: Option<u64>,
    pub n_segments: usize,
    pub n_bins: usize,
    pub band_hz: [f64; 2],
    pub degenerate_input: bool,
    pub s1_available: bool,
    pub s0_db_below_sql: Option<SqlDepth>,
    pub s1_db_below_sql: Option<SqlDepth>,
    pub cancellation: Option<Cancellation>,
    pub residuals: Vec<BandResidual>,
    pub calibration_note: String,
}

pub struct ReportOptions {
    pub band: [f64; 2],
    pub sql_band: [f64; 2],
    pub tolerance: f64,
    pub pass_fraction: f64,
}

fn residual(name: &str, est: &Spectrum, truth: &[f64], band: [f64; 2], tol: f64, pass_fraction: f64) -> BandResidual {
    let idx: Vec<usize> = (0..est.len())
        .filter(|&i| est.freq[i] >= band[0] && est.freq[i] <= band[1])
        .filter(|&i| !est.mask[i].contains(MaskFlags::UNRELIABLE))
        .collect();
    let mut ok = 0;
    let mut worst: f64 = 0.0;
    for &i in &idx {
        if est.is_masked(i) || truth[i] == 0.0 {
            worst = f64::INFINITY;
            continue;
        }
        let rel = (est.values[i] / truth[i] - 1.0).abs();
        worst = worst.max(rel);
        if rel < tol {
            ok += 1;
        }
    }
    BandResidual {
        spectrum: name.to_string(),
        band_hz: band,
        n_bins: idx.len(),
        n_within_tolerance: ok,
        tolerance: tol,
        max_abs_relative: worst,
        pass: !idx.is_empty() && ok as f64 >= pass_fraction * idx.len() as f64,
    }
}

pub fn analysis_report(ds: &RunDataset, a: &Analysis, opts: &ReportOptions) -> Result<AnalysisReport> {
    let mass = ds.config.as_ref().map(|c| c.optical.reduced_mass);
    let depth = |s: &Spectrum| -> Option<SqlDepth> {
        let m = mass?;
        let ratio = normalize_to_sql(s, m).ok()?;
        db_below_sql(&ratio, (opts.sql_band[0], opts.sql_band[1])).ok()
    };
    let (s0_depth, s1_depth) = if a.degenerate {
        (None, None)
    } else {
        (depth(&a.s0), a.s1.as_ref().and_then(depth))
    };
    let cancellation = match (&a.s1, a.degenerate) {
        (Some(s1), false) => {
            let vals: Vec<f64> = (0..s1.len())
                .filter(|&i| s1.freq[i] >= opts.band[0] && s1.freq[i] <= opts.band[1])
                .filter(|&i| !s1.is_masked(i) && !a.s0.is_masked(i))
                .filter(|&i| s1.values[i] > 0.0 && a.s0.values[i] > 0.0)
                .map(|i| 10.0 * (s1.values[i] / a.s0.values[i]).log10())
                .collect();
            (!vals.is_empty()).then(|| Cancellation {
                mean_s1_over_s0_db: vals.iter().sum::<f64>() / vals.len() as f64,
                averaging_limit_db: -5.0 * (ds.n_segments as f64).log10(),
            })
        }
        _ => None,
    };
    let mut residuals = Vec::new();
    if let (Some(t), false) = (&ds.truth, a.degenerate) {
        let e0 = t.expected_s0()?;
        residuals.push(residual(
            "s0",
            &a.s0,
            &e0,
            opts.band,
            opts.tolerance,
            opts.pass_fraction,
        ));
        if let Some(s1) = &a.s1 {
            let e1 = t.expected_s1()?;
            residuals.push(residual("s1", s1, &e1, opts.band, opts.tolerance, opts.pass_fraction));
        }
    }
    Ok(AnalysisReport {
        run: ds.config.as_ref().map(|c| c.name.clone()),
        seed: ds.config.as_ref().map(|c| c.seed),
        n_segments: ds.n_segments,
        n_bins: ds.n_bins(),
        band_hz: opts.band,
        degenerate_input: a.degenerate,
        s1_available: a.s1.is_some(),
        s0_db_below_sql: s0_depth,
        s1_db_below_sql: s1_depth,
        cancellation,
        residuals,
        calibration_note: "statistical uncertainties only; calibration-constant uncertainty is reported separately"
            .into(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BudgetComponentSummary {
    pub name: &'static str,
    pub in_total: bool,
    pub band_mean_m2_per_hz: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BudgetReport {
    pub run: String,
    pub variant: crate::pipeline::BudgetVariant,
    pub band_hz: [f64; 2],
    pub components: Vec<BudgetComponentSummary>,
    pub total_db_below_sql: SqlDepth,
    pub thermal_db_below_sql: Option<SqlDepth>,
    /// Band-averaged ratio of the radiation-pressure term in the total to
    /// the thermal term.
    pub qrpn_to_thermal: Option<f64>,
}

pub fn budget_report(b: &NoiseBudget, reduced_mass: f64, band: [f64; 2]) -> Result<BudgetReport> {
    use crate::pipeline::band_average;
    let range = (band[0], band[1]);
    let components = b
        .components
        .iter()
        .map(|c| {
            Ok(BudgetComponentSummary {
                name: c.kind.name(),
                in_total: c.in_total,
                band_mean_m2_per_hz: band_average(&c.spectrum, band[0], band[1])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = db_below_sql(&normalize_to_sql(&b.total, reduced_mass)?, range)?;
    let thermal = &b.component(ComponentKind::Thermal).spectrum;
    let thermal_depth = db_below_sql(&normalize_to_sql(thermal, reduced_mass)?, range).ok();
    let th_mean = band_average(thermal, band[0], band[1])?;
    let q_mean = band_average(b.qrpn_in_total(), band[0], band[1])?;
    Ok(BudgetReport {
        run: b.run.clone(),
        variant: b.variant,
        band_hz: band,
        components,
        total_db_below_sql: total,
        thermal_db_below_sql: thermal_depth,
        qrpn_to_thermal: (th_mean > 0.0).then(|| q_mean / th_mean),
    })
}
