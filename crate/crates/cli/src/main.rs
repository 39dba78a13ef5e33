use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rtefade::config::AnalysisConfig;
use rtefade::pipeline;
use rtefade::thevenin::FleetScenario;
use rtefade::Error;

#[derive(Parser)]
#[command(name = "rtefade", version, about = "Battery round-trip efficiency and fade from telemetry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect round trips and write an audit table.
    Detect(Common),
    /// Per-trip efficiency, condition correlation and a pooled regression.
    Analyze(Common),
    /// Per-partition regression and the efficiency fade report.
    Fade(Common),
    /// Generate synthetic fleet telemetry from a scenario file.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct Common {
    /// Telemetry CSV files or directories of them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Analysis configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for a uniform interface; analysis is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_config(path: Option<&Path>) -> Result<AnalysisConfig, Error> {
    match path {
        Some(p) => AnalysisConfig::load(p),
        None => Ok(AnalysisConfig::default()),
    }
}

fn out_dir(common: &Common, config: &AnalysisConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("rtefade-out"))
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Detect(common) => {
            let config = load_config(common.config.as_deref())?;
            let files = pipeline::collect_inputs(&common.inputs)?;
            let outcome = pipeline::run_detect(&files, &config)?;
            let out = out_dir(&common, &config);
            pipeline::write_detect(&out, &outcome)?;
            print_warnings(&outcome.summary.run.warnings);
            println!(
                "{} trips in {} segments ({:.2} per day) -> {}",
                outcome.summary.trips,
                outcome.summary.segments,
                outcome.summary.trips_per_day,
                out.display()
            );
        }
        Command::Analyze(common) => {
            let config = load_config(common.config.as_deref())?;
            let files = pipeline::collect_inputs(&common.inputs)?;
            let outcome = pipeline::run_analyze(&files, &config)?;
            let out = out_dir(&common, &config);
            pipeline::write_analyze(&out, &outcome)?;
            print_warnings(&outcome.summary.warnings);
            let m = &outcome.regression;
            println!(
                "{} trips; eta ~ {} + {}: adj. R2 {:.3} -> {}",
                outcome.trips.len(),
                m.condition_names[0],
                m.condition_names[1],
                m.adjusted_r2,
                out.display()
            );
        }
        Command::Fade(common) => {
            let config = load_config(common.config.as_deref())?;
            let files = pipeline::collect_inputs(&common.inputs)?;
            let outcome = pipeline::run_fade(&files, &config)?;
            let out = out_dir(&common, &config);
            pipeline::write_fade(&out, &outcome)?;
            print_warnings(&outcome.summary.warnings);
            println!(
                "{} partitions; fade {:.3} pp -> {}",
                outcome.report.points.len(),
                outcome.report.fade_pp,
                out.display()
            );
        }
        Command::Simulate(args) => {
            let text = std::fs::read_to_string(&args.config)?;
            let scenario: FleetScenario =
                serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let written = pipeline::run_simulate(&scenario, args.seed, &args.out)?;
            println!("{} files -> {}", written.len(), args.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
