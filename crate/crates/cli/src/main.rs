mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Context, Failure, Outcome};

#[derive(Parser)]
#[command(name = "diffkit", version, about = "Path transformations of one-dimensional diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory (overrides the config's `out`; default ".")
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed (overrides sim.seed)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker threads for simulation
    #[arg(long, global = true, env = "DIFFKIT_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Boundary classification and martingale report
    Classify,
    /// Survival function of the exit time by the recurrent-transform estimator
    ExitDist,
    /// European price by the transformed equation
    PriceEu,
    /// Naive vs transformed pricing equation
    DemoNonuniqueness,
    /// Perpetual optimal stopping value and region
    PriceAm,
    /// Stationary density of a positive-recurrent transform
    Stationary,
}

fn run(cli: &Cli) -> Result<Outcome, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let cfg = config::load(path)?;
    if cli.threads == Some(0) {
        return Err(Failure::Config("--threads must be at least 1".into()));
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Context {
        cfg,
        out,
        seed: cli.seed,
        threads: cli.threads,
    };
    match cli.command {
        Command::Classify => commands::classify(&ctx),
        Command::ExitDist => commands::exit_dist(&ctx),
        Command::PriceEu => commands::price_eu(&ctx),
        Command::DemoNonuniqueness => commands::demo_nonuniqueness(&ctx),
        Command::PriceAm => commands::price_am(&ctx),
        Command::Stationary => commands::stationary(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // a closed stdout (e.g. piped into `head`) is not an error; the files are already written
    let print = |v: &serde_json::Value| {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(v).unwrap());
    };
    match run(&cli) {
        Ok(Outcome::Done(v)) => {
            print(&v);
            ExitCode::SUCCESS
        }
        Ok(Outcome::Inconclusive(v)) => {
            print(&v);
            ExitCode::from(2)
        }
        Ok(Outcome::Infinite(v)) => {
            print(&v);
            ExitCode::from(3)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
