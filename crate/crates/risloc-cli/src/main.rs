//! Command-line front end for the risloc experiment drivers.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use risloc::config::SimConfig;
use risloc::harness;

#[derive(Parser)]
#[command(
    name = "risloc",
    version,
    about = "Passive 3D localization of RIS-equipped users: simulation, bounds, and experiment sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; omitted fields (or the whole file) fall back
    /// to the standard setup.
    config: Option<PathBuf>,

    /// Override the experiment base seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the number of noise realizations per RIS draw.
    #[arg(long)]
    trials: Option<u64>,

    /// Directory for CSV and summary outputs.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Exit with a nonzero status if the experiment's built-in checks fail.
    #[arg(long)]
    check: bool,

    /// Print the fully-resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario end to end and export delay and position estimates.
    Simulate(RunArgs),
    /// Position-bound maps over the x-y grid, averaged maps, and the
    /// bound CDF per receiver-circle radius.
    PebMap(RunArgs),
    /// Error and bound CDFs for a user at each configured x offset.
    Cdf(RunArgs),
    /// Average bound versus receiver count, per circle radius.
    SweepRx(RunArgs),
    /// Localization robustness against static scatterers.
    Scatterers(RunArgs),
}

fn load_config(args: &RunArgs) -> risloc::Result<SimConfig> {
    let mut cfg = match &args.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.experiment.noise_draws = trials.max(1);
    }
    Ok(cfg)
}

fn run(
    args: &RunArgs,
    driver: impl Fn(&SimConfig, &std::path::Path) -> risloc::Result<harness::ExperimentOutcome>,
) -> risloc::Result<bool> {
    let cfg = load_config(args)?;
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(true);
    }
    let outcome = driver(&cfg, &args.out)?;
    for file in &outcome.files {
        eprintln!("wrote {}", file.display());
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&outcome.summary).expect("summary serializes")
    );
    Ok(!args.check || outcome.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => run(a, harness::run_simulate),
        Command::PebMap(a) => run(a, harness::run_peb_map),
        Command::Cdf(a) => run(a, harness::run_error_cdf),
        Command::SweepRx(a) => run(a, harness::run_rx_sweep),
        Command::Scatterers(a) => run(a, harness::run_scatterer_sweep),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed: see summary above");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
