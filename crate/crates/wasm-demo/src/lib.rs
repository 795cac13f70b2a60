//! Browser bindings for the interactive demo page in `www/`.
//!
//! Every entry point returns a JSON string; the page parses it and draws the
//! curves on a canvas.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use springnoise::noise_models::{qrpn_psd_free_mass, qrpn_suppression_factor, sql_psd, thermal_psd};
use springnoise::pipeline::{analyze, band_average, build_noise_budget, db_below_sql, normalize_to_sql, BudgetVariant};
use springnoise::presets;
use springnoise::spectrum::linear_grid;
use springnoise::synth::{synthesize_run, RunConfig};
use springnoise::Units;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn run_for(input_power_mw: f64, detuning: f64, os_freq_hz: f64) -> Result<RunConfig, JsError> {
    let cfg = presets::spring_run("demo", input_power_mw * 1e-3, detuning, os_freq_hz, 1);
    cfg.validate().map_err(js_err)?;
    Ok(cfg)
}

/// The bundled runs as `[{name, input_power_mw, detuning, os_freq_hz}]`.
#[wasm_bindgen]
pub fn preset_runs() -> String {
    let runs: Vec<Value> = presets::SPRING_RUNS
        .iter()
        .map(|(name, p, d, f)| json!({ "name": name, "input_power_mw": p * 1e3, "detuning": d, "os_freq_hz": f }))
        .collect();
    Value::Array(runs).to_string()
}

/// Model noise budget of one run on a 1–80 kHz grid, for the `S1`
/// (cross-correlated) or `S0` (single-detector) calibration.
#[wasm_bindgen]
pub fn noise_budget(
    input_power_mw: f64,
    detuning: f64,
    os_freq_hz: f64,
    cross_correlated: bool,
) -> Result<String, JsError> {
    let cfg = run_for(input_power_mw, detuning, os_freq_hz)?;
    let grid = linear_grid(1e3, 80e3, 800);
    let variant = if cross_correlated {
        BudgetVariant::S1
    } else {
        BudgetVariant::S0
    };
    let b = build_noise_budget(&cfg, &cfg.calibration, &grid, variant).map_err(js_err)?;
    let components: serde_json::Map<String, Value> = b
        .components
        .iter()
        .map(|c| {
            (
                c.kind.name().to_string(),
                json!({ "values": c.spectrum.values, "in_total": c.in_total }),
            )
        })
        .collect();
    let ratio = normalize_to_sql(&b.total, cfg.optical.reduced_mass).map_err(js_err)?;
    let depth = db_below_sql(&ratio, (10e3, 60e3)).map_err(js_err)?;
    Ok(json!({
        "freq_hz": grid,
        "components": components,
        "total": b.total.values,
        "min_db_re_sql": depth.min_ratio_db,
        "min_at_hz": depth.at_freq,
    })
    .to_string())
}

/// Radiation-pressure noise with and without the optical-spring
/// suppression, alongside thermal noise and the SQL.
#[wasm_bindgen]
pub fn qrpn_suppression(input_power_mw: f64, detuning: f64, os_freq_hz: f64) -> Result<String, JsError> {
    let cfg = run_for(input_power_mw, detuning, os_freq_hz)?;
    let grid = linear_grid(1e3, 100e3, 1000);
    let q = qrpn_psd_free_mass(&cfg.optical, &grid).map_err(js_err)?;
    let sup = q.map_values(Units::M2PerHz, |f, v| {
        v * qrpn_suppression_factor(f, os_freq_hz).powi(2)
    });
    let th = thermal_psd(&cfg.modeset, &grid).map_err(js_err)?;
    let sql = sql_psd(cfg.optical.reduced_mass, &grid).map_err(js_err)?;
    let ratio = band_average(&sup, 10e3, 60e3).map_err(js_err)? / band_average(&th, 10e3, 60e3).map_err(js_err)?;
    Ok(json!({
        "freq_hz": grid,
        "unsuppressed": q.values,
        "suppressed": sup.values,
        "thermal": th.values,
        "sql": sql.values,
        "qrpn_to_thermal": ratio,
        "circulating_power_w": cfg.optical.circulating_power(),
    })
    .to_string())
}

/// Synthesises a shot-noise-dominated run with `n_segments` segments and
/// returns the single-detector (`S0`) and cross-correlated (`S1`) estimates
/// with the injected displacement noise they should recover.
#[wasm_bindgen]
pub fn shot_cancellation(n_segments: u32, seed: u64) -> Result<String, JsError> {
    if !(1..=4096).contains(&n_segments) {
        return Err(JsError::new("segments must lie in 1..=4096"));
    }
    let mut cfg = presets::shot_dominated_run(seed);
    cfg.n_segments = n_segments as usize;
    let ds = synthesize_run(&cfg).map_err(js_err)?;
    let a = analyze(&ds, &cfg.calibration).map_err(js_err)?;
    let t = ds.truth.as_ref().expect("synthetic runs carry truth");
    let [lo, hi] = cfg.analysis_band;
    let idx: Vec<usize> = (0..ds.n_bins())
        .filter(|&i| ds.freq[i] >= lo && ds.freq[i] <= hi)
        .collect();
    let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    // Masked S1 bins are sent as null so the page leaves gaps.
    let s1: Vec<Value> = match &a.s1 {
        Some(s) => idx
            .iter()
            .map(|&i| {
                if s.is_masked(i) {
                    Value::Null
                } else {
                    json!(s.values[i])
                }
            })
            .collect(),
        None => vec![Value::Null; idx.len()],
    };
    Ok(json!({
        "freq_hz": pick(&ds.freq),
        "s0": pick(&a.s0.values),
        "s1": s1,
        "expected_s0": pick(&t.expected_s0().map_err(js_err)?),
        "expected_s1": pick(&t.expected_s1().map_err(js_err)?),
        "n_segments": n_segments,
    })
    .to_string())
}
