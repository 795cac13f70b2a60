use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use springnoise::io::csv::write_spectrum;
use springnoise::noise_models::thermal_psd;
use springnoise::presets;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_springnoise"))
}

fn examples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/spring_runs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = examples().join("spring_runs.toml");
    for sub in ["a", "b"] {
        let out = run(&[
            "simulate",
            "--config",
            s(&cfg),
            "--run",
            "os69",
            "--segments",
            "32",
            "--out",
            s(&dir.path().join(sub)),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let a = std::fs::read(dir.path().join("a/os69.spnd")).unwrap();
    let b = std::fs::read(dir.path().join("b/os69.spnd")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn simulate_all_runs_of_the_bundled_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = examples().join("spring_runs.toml");
    let out = run(&[
        "simulate",
        "--config",
        s(&cfg),
        "--segments",
        "8",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["os69", "os67", "os63", "os58", "os50"] {
        assert!(dir.path().join(format!("{name}.spnd")).exists(), "{name}");
    }
}

#[test]
fn seed_override_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = examples().join("spring_runs.toml");
    let base = ["simulate", "--config", s(&cfg), "--run", "os69", "--segments", "8"];
    let p1 = dir.path().join("one.spnd");
    let p2 = dir.path().join("two.spnd");
    assert_eq!(code(&run(&[&base[..], &["--out", s(&p1)]].concat())), 0);
    assert_eq!(
        code(&run(&[&base[..], &["--out", s(&p2), "--seed-override", "99"]].concat())),
        0
    );
    assert_ne!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
}

#[test]
fn missing_run_exits_2_and_lists_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = examples().join("spring_runs.toml");
    let out = run(&["simulate", "--config", s(&cfg), "--run", "nope", "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("os69, os67, os63, os58, os50"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn schema_violation_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(examples().join("spring_runs.toml"))
        .unwrap()
        .replace("seed = 3", "seed = \"three\"");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = run(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("run[2].seed"), "{}", stderr(&out));
}

#[test]
fn missing_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--config", "/no/such/file.toml", "--out", s(dir.path())]);
    assert_eq!(code(&out), 3);
}

#[test]
fn corrupt_dataset_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.spnd");
    std::fs::write(&p, b"SPNDSET\0 truncated").unwrap();
    let out = run(&["analyze", s(&p), "--out", s(&dir.path().join("an"))]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn analyze_writes_spectra_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = examples().join("spring_runs.toml");
    let ds = dir.path().join("os69.spnd");
    let out = run(&[
        "simulate",
        "--config",
        s(&cfg),
        "--run",
        "os69",
        "--segments",
        "64",
        "--out",
        s(&ds),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let an = dir.path().join("an");
    let out = run(&["analyze", s(&ds), "--out", s(&an), "--band", "10000:60000"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in [
        "s_ff",
        "s_ll",
        "s_mm",
        "s_fl",
        "s_lm",
        "coherence",
        "s0",
        "s1",
        "s0_over_sql",
    ] {
        assert!(an.join(format!("{f}.csv")).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(an.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["degenerate_input"], false);
    let residuals = report["residuals"].as_array().unwrap();
    assert_eq!(residuals.len(), 2);
    assert!(residuals.iter().all(|r| r["pass"].is_boolean()));
    assert!(report["s1_db_below_sql"]["min_ratio_db"].is_number());

    let js = dir.path().join("js");
    let out = run(&["analyze", s(&ds), "--out", s(&js), "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let spectra: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(js.join("spectra.json")).unwrap()).unwrap();
    assert!(spectra["s_lm"]["imag_value"].is_array());
}

#[test]
fn budget_files_sum_to_total() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = examples().join("spring_runs.toml");
    let out = run(&[
        "budget",
        "--config",
        s(&cfg),
        "--run",
        "os63",
        "--out",
        s(dir.path()),
        "--format",
        "json",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("os63/budget.json")).unwrap()).unwrap();
    let total = b["total"]["value"].as_array().unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("budget_report.json")).unwrap()).unwrap();
    let in_total: Vec<&str> = report[0]["components"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["in_total"] == true)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    for (i, t) in total.iter().enumerate() {
        let sum: f64 = in_total.iter().map(|n| b[n]["value"][i].as_f64().unwrap()).sum();
        let t = t.as_f64().unwrap();
        assert!((t - sum).abs() <= 1e-12 * t.abs(), "bin {i}");
    }
}

#[test]
fn five_db_budget_reports_minus_five() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = examples().join("five_db_sql.toml");
    let out = run(&["budget", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("budget_report.json")).unwrap()).unwrap();
    let db = report[0]["total_db_below_sql"]["min_ratio_db"].as_f64().unwrap();
    assert!((db + 5.0).abs() < 0.1, "{db}");
}

#[test]
fn ringdown_fit_recovers_q() {
    let dir = tempfile::tempdir().unwrap();
    let tau = 9.08;
    let mut csv = String::from("time_s,amplitude\n");
    for i in 0..200 {
        let t = i as f64 * 0.1;
        csv.push_str(&format!("{t},{}\n", (-t / tau).exp()));
    }
    let data = dir.path().join("ring.csv");
    std::fs::write(&data, csv).unwrap();
    let init = dir.path().join("init.json");
    std::fs::write(&init, r#"{ "freq_hz": 876.0 }"#).unwrap();
    let out = run(&["fit", "ringdown", s(&data), "--init", s(&init)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let q = v["fit"]["q"].as_f64().unwrap();
    let expected = std::f64::consts::PI * 876.0 * tau;
    assert!((q / expected - 1.0).abs() < 1e-4, "{q}");
    assert!((q / 25_000.0 - 1.0).abs() < 0.002, "{q}");
}

#[test]
fn modal_fit_from_spectrum_csv() {
    let dir = tempfile::tempdir().unwrap();
    let truth = presets::reference_modeset();
    let mut grid = Vec::new();
    for m in &truth.modes {
        let f0 = m.resonance_freq_hz();
        let lw = f0 / presets::QUALITY_FACTOR;
        grid.extend((-100..=100).map(|i| f0 + (i as f64 + 0.3) * lw / 10.0));
    }
    let spec = thermal_psd(&truth, &grid).unwrap();
    let data = dir.path().join("thermal.csv");
    write_spectrum(&data, &spec, "thermal").unwrap();
    let init = dir.path().join("init.json");
    std::fs::write(
        &init,
        r#"{ "temperature_k": 25.0, "quality_factor": 25000.0, "modes": [
            { "freq_hz": 876.0, "modal_mass_kg": 5e-9 },
            { "freq_hz": 11000.0, "modal_mass_kg": 5e-7 },
            { "freq_hz": 27900.0, "modal_mass_kg": 2e-6 },
            { "freq_hz": 52500.0, "modal_mass_kg": 1e-6 } ] }"#,
    )
    .unwrap();
    let out_path = dir.path().join("fit.json");
    let out = run(&["fit", "modes", s(&data), "--init", s(&init), "--out", s(&out_path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_path).unwrap()).unwrap();
    for (k, m) in truth.modes.iter().enumerate() {
        let fitted = v["fit"]["modeset"]["modes"][k]["modal_mass"].as_f64().unwrap();
        assert!((fitted / m.modal_mass - 1.0).abs() < 1e-3, "mode {k}: {fitted}");
    }
}

#[test]
fn modal_fit_without_a_peak_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    // Only the fundamental is present, so the spectrum falls monotonically
    // through the window where a 27.9 kHz mode is sought.
    let only_fundamental = springnoise::noise_models::ModeSet::single(
        2.5e-9,
        presets::FUNDAMENTAL_HZ,
        presets::QUALITY_FACTOR,
        presets::TEMPERATURE,
    )
    .unwrap();
    let grid: Vec<f64> = (0..2000).map(|i| 24e3 + i as f64 * 4.0).collect();
    let spec = thermal_psd(&only_fundamental, &grid).unwrap();
    let data = dir.path().join("flat.csv");
    write_spectrum(&data, &spec, "thermal").unwrap();
    let init = dir.path().join("init.json");
    std::fs::write(
        &init,
        r#"{ "temperature_k": 25.0, "quality_factor": 25000.0,
             "modes": [ { "freq_hz": 27900.0, "modal_mass_kg": 1e-6 } ] }"#,
    )
    .unwrap();
    let out = run(&["fit", "modes", s(&data), "--init", s(&init)]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    assert!(stderr(&out).contains("mode 0"), "{}", stderr(&out));
}

#[test]
fn bad_band_flag_is_a_usage_error() {
    let out = run(&["analyze", "x.spnd", "--out", "y", "--band", "60000:10000"]);
    assert_eq!(code(&out), 2);
}
