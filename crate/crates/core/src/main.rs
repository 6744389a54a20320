use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use agehazard::cli::{cmd_analyze, cmd_baseline, cmd_ingest, ingest_report, Overrides, RunConfig};
use agehazard::format::sig6;

#[derive(Parser)]
#[command(name = "agehazard", version, about = "Age- and time-varying termination hazards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate flow records into the time x age panel.
    Ingest(Common),
    /// Run the sampler and write posterior surfaces.
    Analyze(Common),
    /// Fisher exact tests, hinge fit and quarterly rates.
    Baseline(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured number of chains.
    #[arg(long)]
    chains: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> agehazard::Result<RunConfig> {
        let o = Overrides {
            seed: self.seed,
            chains: self.chains,
            out: self.out.clone(),
        };
        RunConfig::load(&self.config, &o)
    }
}

fn run(cli: Cli) -> agehazard::Result<()> {
    match cli.command {
        Command::Ingest(c) => {
            let o = cmd_ingest(&c.load()?)?;
            println!("{}", ingest_report(&o));
        }
        Command::Analyze(c) => {
            let cfg = c.load()?;
            let o = cmd_analyze(&cfg)?;
            println!("draws: {}", o.chains.iter().map(|c| c.draws.len()).sum::<usize>());
            println!("rho,posterior,marginal_likelihood");
            for row in &o.rho.rows {
                println!("{},{},{}", sig6(row.rho), sig6(row.frequency), sig6(row.marginal));
            }
            println!("output: {}", cfg.output_dir.display());
        }
        Command::Baseline(c) => {
            let o = cmd_baseline(&c.load()?)?;
            for r in &o.rows {
                println!("{}: statistic {}, p {} ({})", r.test, sig6(r.statistic), sig6(r.p_value), r.groups);
            }
            println!("report: {}", o.report_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
