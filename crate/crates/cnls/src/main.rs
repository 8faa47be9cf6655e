use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cnls::commands::{cmd_classify, cmd_dichotomy, cmd_simulate, cmd_threshold, cmd_verify, membership_table};
use cnls::{Context, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(
    name = "cnls",
    version,
    about = "Threshold, dynamics and dichotomy experiments for combined-nonlinearity NLS"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Ground state and threshold m.
    Threshold(Common),
    /// Membership of each initial datum, no evolution.
    Classify(Common),
    /// Evolve each initial datum and classify the outcome.
    Simulate(Common),
    /// Sweep one parameter of the first datum through the dichotomy.
    Dichotomy(Common),
    /// Run the property suite.
    Verify(Common),
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let common = match &cli.command {
        Command::Threshold(c)
        | Command::Classify(c)
        | Command::Simulate(c)
        | Command::Dichotomy(c)
        | Command::Verify(c) => c,
    };
    let cfg = ExperimentConfig::load(&common.config)?;
    let ctx = Context {
        jobs: common.jobs,
        output: common.output.clone(),
    };
    match cli.command {
        Command::Threshold(_) => {
            let t = cmd_threshold(&cfg, &ctx)?;
            println!(
                "m = {:.16e} (residual {:.3e}, sobolev gap {:.3e})",
                t.m, t.pde_residual, t.sobolev_gap
            );
        }
        Command::Classify(_) => print!("{}", membership_table(&cmd_classify(&cfg, &ctx)?)),
        Command::Simulate(_) => {
            let s = cmd_simulate(&cfg, &ctx)?;
            for r in &s.runs {
                let class = r
                    .report
                    .as_ref()
                    .map(|x| format!("{:?}", x.classification))
                    .unwrap_or_default();
                println!("datum {}: {:?} {:?} {}", r.index, r.membership, r.outcome, class);
            }
        }
        Command::Dichotomy(_) => {
            let s = cmd_dichotomy(&cfg, &ctx)?;
            for r in &s.rows {
                println!(
                    "{:>12.6} {:?} {:?} {:?}",
                    r.parameter, r.membership, r.outcome, r.classification
                );
            }
        }
        Command::Verify(_) => {
            let s = cmd_verify(&cfg, &ctx)?;
            println!("{} checks passed", s.checks.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
