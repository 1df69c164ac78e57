use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qpe_bench::config::{ConfigFile, Overrides, Scenario, ScenarioConfig};
use qpe_bench::scenario::{chi_selftest, run_scenario, Report};
use qpe_bench::{BenchError, Result};
use qpe_core::prony::{estimate, PronyConfig};
use qpe_core::signal::SignalEstimate;
use qpe_core::simulator::stream_rng;
use qpe_core::{circular_distance, Spectrum};
use rand::Rng;

#[derive(Parser)]
#[command(
    name = "qpe-bench",
    version,
    about = "Monte-Carlo studies of single-ancilla phase estimation"
)]
struct Cli {
    /// TOML config; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario named in the config (or by --scenario).
    Simulate {
        #[arg(long, value_enum)]
        scenario: Option<Scenario>,
        #[command(flatten)]
        flags: Overrides,
    },
    /// Single eigenvalue: error against N and K.
    ScalingStudy {
        #[command(flatten)]
        flags: Overrides,
    },
    /// Two eigenvalues: error over a grid of target weight and gap.
    Surface {
        #[command(flatten)]
        flags: Overrides,
    },
    /// Depolarizing noise with and without compensation.
    NoiseStudy {
        #[command(flatten)]
        flags: Overrides,
    },
    /// Closed-form multi-round coefficients against enumeration.
    ChiSelftest {
        #[command(flatten)]
        flags: Overrides,
    },
    /// Quick end-to-end checks; non-zero exit on failure.
    Selftest {
        #[command(flatten)]
        flags: Overrides,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let (scenario, flags) = match cli.command {
        Command::Simulate { scenario, flags } => (scenario, flags),
        Command::ScalingStudy { flags } => (Some(Scenario::SingleEvScaling), flags),
        Command::Surface { flags } => (Some(Scenario::TwoEvSurface), flags),
        Command::NoiseStudy { flags } => (Some(Scenario::DepolarizingStudy), flags),
        Command::ChiSelftest { flags } => (Some(Scenario::ChiSelftest), flags),
        Command::Selftest { flags } => return selftest(&file, &flags),
    };
    let cfg = ScenarioConfig::resolve(scenario, &file, &flags)?;
    let report = run_scenario(&cfg)?;
    emit(&cfg, &report)?;
    Ok(report.passed.unwrap_or(true))
}

fn emit(cfg: &ScenarioConfig, report: &Report) -> Result<()> {
    let csv = report.summary_csv();
    match &cfg.out {
        Some(p) => std::fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    if let Some(p) = &cfg.per_trial {
        std::fs::write(p, report.per_trial_csv())?;
    }
    for (name, v) in &report.fits {
        eprintln!("{name} = {v:.4}");
    }
    Ok(())
}

fn check(name: &str, ok: bool, detail: String) -> bool {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn selftest(file: &ConfigFile, flags: &Overrides) -> Result<bool> {
    let mut all = true;
    let cfg = ScenarioConfig::resolve(Some(Scenario::ChiSelftest), file, flags)?;
    let chi = chi_selftest(&cfg, &[2, 4, 6, 8]);
    let worst = chi.fits.iter().map(|f| f.1).fold(0.0, f64::max);
    all &= check("chi", chi.passed == Some(true), format!("max deviation {worst:.2e}"));

    let mut rng = stream_rng(cfg.seed, 0);
    let entries: Vec<(f64, f64)> = (0..10)
        .map(|i| (-3.0 + 0.6 * i as f64 + rng.random_range(0.0..0.3), 0.1))
        .collect();
    let spectrum = Spectrum::new(entries)?;
    let est = estimate(&SignalEstimate::exact(&spectrum, 20), &PronyConfig::default())?;
    let err = spectrum
        .phases()
        .map(|p| {
            est.phases()
                .into_iter()
                .map(|q| circular_distance(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    all &= check("exact recovery", err < 1e-8, format!("worst phase error {err:.2e}"));

    let mut small = Overrides {
        trials: Some(flags.trials.unwrap_or(20)),
        n: Some(vec![2_000, 20_000]),
        k: Some(vec![10]),
        l: Some(flags.l.clone().unwrap_or_else(|| "half".into())),
        ..flags.clone()
    };
    small.out = None;
    let cfg = ScenarioConfig::resolve(Some(Scenario::SingleEvScaling), &ConfigFile::default(), &small)?;
    let report = run_scenario(&cfg)?;
    let slope = report
        .fits
        .first()
        .map(|f| f.1)
        .ok_or_else(|| BenchError::Config("no fit".into()))?;
    all &= check(
        "sampling scaling",
        (slope + 0.5).abs() < 0.2,
        format!("slope vs N {slope:.3}"),
    );
    Ok(all)
}
