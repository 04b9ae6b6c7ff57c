use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cran_ec::cli::{
    run_audit, run_multiuser, run_outage, run_solve, run_sweep, ConfigFile, Overrides, RunSummary,
};

/// Delay-QoS-aware transmit power optimization for C-RAN downlinks.
#[derive(Parser)]
#[command(name = "cran-ec", version, about)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Top-level seed; every consumer derives a named substream from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo sample count (meaning depends on the subcommand).
    #[arg(long)]
    samples: Option<usize>,
    /// Subgradient step parameter a in ζ_k = a/k.
    #[arg(long = "step-a")]
    step_a: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Relative average-power tolerance of the dual solver.
    #[arg(long)]
    tol: Option<f64>,
    /// Average-power estimator: online, analytic or batch-mc.
    #[arg(long)]
    mode: Option<String>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the dual prices and write the convergence trace.
    Solve(Common),
    /// Normalized effective capacity versus θ across policies.
    Sweep(Common),
    /// Closed-form average power against Monte Carlo.
    Audit(Common),
    /// Delay-outage probability versus θ.
    Outage(Common),
    /// Multiuser policy under shared average-power budgets.
    Multiuser(Common),
}

fn overrides(c: &Common) -> Overrides {
    Overrides {
        seed: c.seed,
        samples: c.samples,
        step_a: c.step_a,
        max_iter: c.max_iter,
        tol: c.tol,
        mode: c.mode.clone(),
        out: c.out.clone(),
    }
}

fn run() -> cran_ec::Result<RunSummary> {
    let cli = CliArgs::parse();
    let (common, runner): (
        &Common,
        fn(&ConfigFile, &Overrides) -> cran_ec::Result<RunSummary>,
    ) = match &cli.command {
        Command::Solve(c) => (c, run_solve),
        Command::Sweep(c) => (c, run_sweep),
        Command::Audit(c) => (c, run_audit),
        Command::Outage(c) => (c, run_outage),
        Command::Multiuser(c) => (c, run_multiuser),
    };
    let config = ConfigFile::load(&common.config)?;
    runner(&config, &overrides(common))
}

fn main() -> ExitCode {
    match run() {
        Ok(summary) => {
            println!(
                "wrote {} ({} rows)",
                summary.out_path.display(),
                summary.rows
            );
            for note in &summary.notes {
                println!("{note}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
