use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wgflow_cli::{cmd_compare, cmd_diagnose, cmd_run, CliError, RunConfig, RunOptions};

#[derive(Parser)]
#[command(name = "wgflow", version, about = "BDF2 and JKO Wasserstein gradient flows in 1D")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured scheme(s) and write states, scalars and a manifest.
    Run(RunArgs),
    /// Sweep the time step for both schemes and score against the reference.
    Compare(RunArgs),
    /// Replay all diagnostics on the artifacts of a previous run.
    Diagnose {
        /// Run directory (or the parent of `jko/` and `bdf2/`).
        #[arg(long = "out", value_name = "DIR")]
        dir: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    override_tau_guard: bool,
    #[arg(long)]
    quiet: bool,
}

impl RunArgs {
    fn load(&self) -> Result<(RunConfig, RunOptions), CliError> {
        let cfg = RunConfig::load(&self.config)?;
        let opts = RunOptions {
            out: self.out.clone(),
            override_tau_guard: self.override_tau_guard,
            quiet: self.quiet,
        };
        Ok((cfg, opts))
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let (cfg, opts) = args.load()?;
            cmd_run(&cfg, &opts).map(|_| ())
        }
        Command::Compare(args) => {
            let (cfg, opts) = args.load()?;
            cmd_compare(&cfg, &opts).map(|_| ())
        }
        Command::Diagnose { dir, quiet } => cmd_diagnose(&dir, quiet).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wgflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
