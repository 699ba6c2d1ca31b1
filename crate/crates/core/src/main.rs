use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kaclab::config::SimConfig;
use kaclab::harness::{self, Suite};

#[derive(Parser)]
#[command(name = "kaclab", version, about = "Conservative Kac particle simulations of the Landau equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all replicas of a config and write a run directory.
    Simulate { config: PathBuf },
    /// Run the configured law against its shifted copy under shared noise.
    Couple { config: PathBuf },
    /// Chaos covariance and self-convergence table over `chaos_n_list`.
    Chaos { config: PathBuf },
    /// Run a verification suite and print one line per criterion.
    Verify {
        /// kernels, inequalities, conservation, oracle, chaos or stability
        suite: String,
        /// Run directory the oracle, chaos and stability suites read.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Also write the report as JSON to this path.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Summarise a run directory and check its checksums.
    Report { run_dir: PathBuf },
    /// Continue a stored replica for more time.
    Resume {
        snapshot: PathBuf,
        /// Additional time to integrate.
        #[arg(long)]
        horizon: f64,
        /// Config to continue with instead of the one recorded in the run.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn configure_workers() {
    if let Ok(v) = std::env::var("KACLAB_WORKERS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size the worker pool: {e}");
                }
            }
            _ => log::warn!("ignoring KACLAB_WORKERS={v:?}; expected a positive integer"),
        }
    }
}

fn execute(cli: Cli) -> kaclab::Result<bool> {
    match cli.command {
        Command::Simulate { config } => {
            println!("{}", harness::run(&config)?.display());
        }
        Command::Couple { config } => {
            println!("{}", harness::run_couple(&SimConfig::from_path(&config)?)?.display());
        }
        Command::Chaos { config } => {
            println!("{}", harness::run_chaos(&SimConfig::from_path(&config)?)?.display());
        }
        Command::Verify { suite, run_dir, json } => {
            let report = harness::verify(Suite::parse(&suite)?, run_dir.as_deref())?;
            for c in &report.criteria {
                println!("{}", c.line());
            }
            println!("suite {}: {}", suite, if report.passed { "PASS" } else { "FAIL" });
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                std::fs::write(&path, text).map_err(|e| kaclab::KacError::io(&path, e))?;
            }
            return Ok(report.passed);
        }
        Command::Report { run_dir } => {
            let summary = harness::report(&run_dir)?;
            print!("{}", summary.text);
            return Ok(summary.checksum_failures.is_empty());
        }
        Command::Resume { snapshot, horizon, config } => {
            let cfg = config.map(|p| SimConfig::from_path(&p)).transpose()?;
            println!("{}", harness::resume_with(&snapshot, horizon, cfg.as_ref())?.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    configure_workers();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
