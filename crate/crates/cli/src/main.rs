//! `springnoise` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use springnoise::estimator::{fit_ringdown, RingdownFit};
use springnoise::io::config::ExperimentConfig;
use springnoise::io::csv::{read_spectrum_file, write_cross_spectrum, write_spectrum, SpectrumFile};
use springnoise::io::dataset::{read_dataset, write_dataset, MAGIC};
use springnoise::io::report::{analysis_report, budget_report, ReportOptions};
use springnoise::io::write_atomic;
use springnoise::noise_models::{MechanicalMode, ModeSet};
use springnoise::pipeline::{
    analyze, build_noise_budget, fit_modal_masses, normalize_to_sql, BudgetVariant, CalibrationConstant,
    ModalFitOptions,
};
use springnoise::synth::{synthesize_run, RunConfig};
use springnoise::{CrossSpectrum, Spectrum};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DATA: u8 = 4;
const EXIT_FIT: u8 = 5;

#[derive(Parser)]
#[command(name = "springnoise", version, about = "Optical-spring noise synthesis and analysis")]
struct Cli {
    /// Worker threads for segment-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise dataset files for one or all runs of a config.
    Simulate(SimulateArgs),
    /// Estimate spectra from a dataset and write them with a JSON report.
    Analyze(AnalyzeArgs),
    /// Evaluate the model noise budget of one or all runs.
    Budget(BudgetArgs),
    /// Fit a ring-down or modal masses.
    Fit(FitArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run to simulate; all runs when omitted.
    #[arg(long)]
    run: Option<String>,
    /// Output directory, or a file path when a single run is selected.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed_override: Option<u64>,
    #[arg(long)]
    segments: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct AnalyzeArgs {
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Experiment config supplying calibration and report options; the
    /// values embedded in the dataset are used otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report band as `lo:hi` in Hz.
    #[arg(long, value_parser = parse_band)]
    band: Option<[f64; 2]>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    S0,
    S1,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_band)]
    band: Option<[f64; 2]>,
    #[arg(long, value_enum, default_value = "s1")]
    variant: Variant,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMode {
    Ringdown,
    Modes,
}

#[derive(Args)]
struct FitArgs {
    #[arg(value_enum)]
    mode: FitMode,
    /// Ring-down CSV (`time_s,amplitude`), spectrum CSV or dataset file.
    input: PathBuf,
    /// Initial-guess JSON file.
    #[arg(long)]
    init: PathBuf,
    /// Output JSON; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_band)]
    band: Option<[f64; 2]>,
}

fn parse_band(s: &str) -> std::result::Result<[f64; 2], String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("lo: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("hi: {e}"))?;
    if !(lo >= 0.0 && hi > lo) {
        return Err("need 0 <= lo < hi".into());
    }
    Ok([lo, hi])
}

/// Error tagged with the exit code it maps to.
#[derive(Debug)]
struct Exit(u8, anyhow::Error);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.1)
    }
}

impl std::error::Error for Exit {}

fn coded(code: u8, err: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(Exit(code, err.into()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(Exit(code, _)) = cause.downcast_ref::<Exit>() {
            return *code;
        }
        if let Some(e) = cause.downcast_ref::<springnoise::Error>() {
            use springnoise::Error as E;
            return match e {
                E::Config { .. } => EXIT_CONFIG,
                E::Io(_) => EXIT_IO,
                E::FitFailure(_) | E::ModeNotFound { .. } => EXIT_FIT,
                _ => EXIT_DATA,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_DATA
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn select_runs<'a>(cfg: &'a ExperimentConfig, run: Option<&str>) -> Result<Vec<&'a RunConfig>> {
    match run {
        Some(name) => Ok(vec![cfg.run(name)?]),
        None => Ok(cfg.runs.iter().collect()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let runs = select_runs(&cfg, args.run.as_deref())?;
    let single_file = args.run.is_some() && args.out.extension().is_some() && !args.out.is_dir();
    if !single_file {
        ensure_dir(&args.out)?;
    }
    for run in runs {
        let mut run = run.clone();
        if let Some(seed) = args.seed_override {
            run.seed = seed;
        }
        if let Some(n) = args.segments {
            run.n_segments = n;
        }
        run.validate().map_err(|e| coded(EXIT_CONFIG, e))?;
        let ds = synthesize_run(&run)?;
        let path = if single_file {
            args.out.clone()
        } else {
            args.out.join(format!("{}.spnd", run.name))
        };
        write_dataset(&path, &ds).with_context(|| format!("writing {}", path.display()))?;
        println!(
            "{}: {} segments x {} bins, band {}..{} Hz, seed {} -> {}",
            run.name,
            run.n_segments,
            ds.n_bins(),
            run.analysis_band[0],
            run.analysis_band[1],
            run.seed,
            path.display()
        );
    }
    Ok(())
}

fn spectrum_json(s: &Spectrum) -> serde_json::Value {
    json!({
        "units": s.units.tag(),
        "n_averages": s.n_averages,
        "freq_hz": s.freq,
        "value": s.values,
        "uncertainty": s.uncertainty,
        "mask_flags": s.mask.iter().map(|m| m.bits()).collect::<Vec<_>>(),
    })
}

fn cross_json(s: &CrossSpectrum) -> serde_json::Value {
    json!({
        "units": s.units.tag(),
        "n_averages": s.n_averages,
        "freq_hz": s.freq,
        "value": s.values.iter().map(|v| v.re).collect::<Vec<_>>(),
        "imag_value": s.values.iter().map(|v| v.im).collect::<Vec<_>>(),
        "uncertainty": s.uncertainty,
        "mask_flags": s.mask.iter().map(|m| m.bits()).collect::<Vec<_>>(),
    })
}

enum Out<'a> {
    Psd(&'a Spectrum),
    Cpsd(&'a CrossSpectrum),
}

fn write_spectra(dir: &Path, format: Format, file_stem: &str, items: &[(&str, Out)]) -> Result<()> {
    match format {
        Format::Csv => {
            for (name, s) in items {
                let path = dir.join(format!("{name}.csv"));
                match s {
                    Out::Psd(s) => write_spectrum(&path, s, name)?,
                    Out::Cpsd(s) => write_cross_spectrum(&path, s, name)?,
                }
            }
        }
        Format::Json => {
            let mut map = serde_json::Map::new();
            for (name, s) in items {
                let v = match s {
                    Out::Psd(s) => spectrum_json(s),
                    Out::Cpsd(s) => cross_json(s),
                };
                map.insert(name.to_string(), v);
            }
            let text = serde_json::to_string_pretty(&map)?;
            write_atomic(&dir.join(format!("{file_stem}.json")), text.as_bytes())?;
        }
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<()> {
    let ds = read_dataset(&args.dataset).with_context(|| format!("reading {}", args.dataset.display()))?;
    let exp = args.config.as_deref().map(load_config).transpose()?;
    let run = ds.config.as_ref();
    let k: CalibrationConstant = match (&exp, run) {
        (Some(e), _) => e.calibration.clone(),
        (None, Some(r)) => r.calibration.clone(),
        (None, None) => bail!(coded(
            EXIT_CONFIG,
            anyhow!("dataset has no embedded config; pass --config")
        )),
    };
    let band = args
        .band
        .or(exp.as_ref().map(|e| e.analysis_band))
        .or(run.map(|r| r.analysis_band))
        .unwrap_or([ds.freq[0], *ds.freq.last().unwrap()]);
    let opts = ReportOptions {
        band,
        sql_band: match (&exp, args.band) {
            (_, Some(b)) => b,
            (Some(e), None) => e.sql_band(),
            (None, None) => band,
        },
        tolerance: exp.as_ref().map_or(0.1, |e| e.report.residual_tolerance),
        pass_fraction: exp.as_ref().map_or(0.95, |e| e.report.pass_fraction),
    };
    let a = analyze(&ds, &k)?;
    ensure_dir(&args.out)?;

    let mut ratios = Vec::new();
    if let (Some(r), false) = (run, a.degenerate) {
        ratios.push(("s0_over_sql", normalize_to_sql(&a.s0, r.optical.reduced_mass)?));
        if let Some(s1) = &a.s1 {
            ratios.push(("s1_over_sql", normalize_to_sql(s1, r.optical.reduced_mass)?));
        }
    }
    let mut items = vec![
        ("s_ff", Out::Psd(&a.s_ff)),
        ("s_ll", Out::Psd(&a.s_ll)),
        ("s_mm", Out::Psd(&a.s_mm)),
        ("s_fl", Out::Cpsd(&a.s_fl)),
        ("s_lm", Out::Cpsd(&a.s_lm)),
        ("coherence", Out::Psd(&a.coherence)),
        ("s0", Out::Psd(&a.s0)),
    ];
    if let Some(s1) = &a.s1 {
        items.push(("s1", Out::Psd(s1)));
    }
    for (name, s) in &ratios {
        items.push((name, Out::Psd(s)));
    }
    write_spectra(&args.out, args.format, "spectra", &items)?;

    let report = analysis_report(&ds, &a, &opts)?;
    write_json(&args.out.join("report.json"), &report)?;
    if report.degenerate_input {
        println!("degenerate input: every PSD is zero");
    }
    if let Some(d) = &report.s1_db_below_sql {
        println!("S1 minimum {:.2} dB re SQL at {:.0} Hz", d.min_ratio_db, d.at_freq);
    }
    for r in &report.residuals {
        println!(
            "{}: {}/{} bins within {:.0}% -> {}",
            r.spectrum,
            r.n_within_tolerance,
            r.n_bins,
            100.0 * r.tolerance,
            if r.pass { "pass" } else { "fail" }
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn budget_cmd(args: BudgetArgs) -> Result<()> {
    let exp = load_config(&args.config)?;
    let runs = select_runs(&exp, args.run.as_deref())?;
    let variant = match args.variant {
        Variant::S0 => BudgetVariant::S0,
        Variant::S1 => BudgetVariant::S1,
    };
    let band = args.band.unwrap_or(exp.sql_band());
    let mut reports = Vec::new();
    for run in runs {
        let b = build_noise_budget(run, &exp.calibration, &run.bin_freqs(), variant)?;
        let dir = args.out.join(&run.name);
        ensure_dir(&dir)?;
        let mut items: Vec<(&str, Out)> = b
            .components
            .iter()
            .map(|c| (c.kind.name(), Out::Psd(&c.spectrum)))
            .collect();
        items.push(("total", Out::Psd(&b.total)));
        write_spectra(&dir, args.format, "budget", &items)?;
        let report = budget_report(&b, run.optical.reduced_mass, band)?;
        println!(
            "{}: total minimum {:.2} dB re SQL at {:.0} Hz",
            run.name, report.total_db_below_sql.min_ratio_db, report.total_db_below_sql.at_freq
        );
        reports.push(report);
    }
    ensure_dir(&args.out)?;
    write_json(&args.out.join("budget_report.json"), &reports)?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RingdownInit {
    freq_hz: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeInit {
    freq_hz: f64,
    modal_mass_kg: f64,
    #[serde(default)]
    quality_factor: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModesInit {
    temperature_k: f64,
    quality_factor: f64,
    modes: Vec<ModeInit>,
    #[serde(default)]
    band_hz: Option<[f64; 2]>,
    #[serde(default)]
    fit_frequencies: bool,
}

fn read_init<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        coded(
            EXIT_CONFIG,
            anyhow!("{}: field `{}`: {}", path.display(), e.path(), e.inner()),
        )
    })
}

fn read_ringdown_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let (mut t, mut a) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.deserialize::<(f64, f64)>().enumerate() {
        let (ti, ai) = rec.map_err(|e| coded(EXIT_DATA, anyhow!("{}: row {}: {e}", path.display(), i + 1)))?;
        t.push(ti);
        a.push(ai);
    }
    Ok((t, a))
}

fn is_dataset(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut head = [0u8; 8];
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(f.read(&mut head)? == 8 && &head == MAGIC)
}

fn fit_cmd(args: FitArgs) -> Result<()> {
    let out = match args.mode {
        FitMode::Ringdown => {
            let init: RingdownInit = read_init(&args.init)?;
            let (t, a) = read_ringdown_csv(&args.input)?;
            let fit: RingdownFit = fit_ringdown(&t, &a, init.freq_hz).map_err(|e| {
                let code = if matches!(e, springnoise::Error::FitFailure(_)) {
                    EXIT_FIT
                } else {
                    EXIT_DATA
                };
                coded(code, e)
            })?;
            json!({ "mode": "ringdown", "freq_hz": init.freq_hz, "fit": fit })
        }
        FitMode::Modes => {
            let init: ModesInit = read_init(&args.init)?;
            let modes = init
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
            let set = ModeSet::new(modes, 1.0 / init.quality_factor, init.temperature_k)
                .map_err(|e| coded(EXIT_CONFIG, e))?;
            let measured = if is_dataset(&args.input)? {
                let ds = read_dataset(&args.input)?;
                let k = ds
                    .config
                    .as_ref()
                    .map(|c| c.calibration.clone())
                    .ok_or_else(|| coded(EXIT_DATA, anyhow!("dataset has no embedded calibration")))?;
                analyze(&ds, &k)?.s0
            } else {
                match read_spectrum_file(&args.input)? {
                    (SpectrumFile::Psd(s), _) => s,
                    (SpectrumFile::Cpsd(_), _) => {
                        bail!(coded(EXIT_DATA, anyhow!("modal fit needs a PSD, got a CPSD file")))
                    }
                }
            };
            let band = args
                .band
                .or(init.band_hz)
                .unwrap_or([measured.freq[0], *measured.freq.last().unwrap()]);
            let opts = ModalFitOptions {
                fit_frequencies: init.fit_frequencies,
                ..ModalFitOptions::default()
            };
            let fit = fit_modal_masses(&measured, &set, (band[0], band[1]), &opts)?;
            json!({ "mode": "modes", "band_hz": band, "fit": fit })
        }
    };
    match &args.out {
        Some(path) => {
            write_json(path, &out)?;
            println!("wrote {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&out)?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| coded(EXIT_CONFIG, anyhow!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Budget(a) => budget_cmd(a),
        Command::Fit(a) => fit_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
