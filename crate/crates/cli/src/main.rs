use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sbpdiff_cli::commands::{cmd_converge, cmd_run, cmd_verify, load_config, Output};
use sbpdiff_cli::Result;

#[derive(Parser)]
#[command(
    name = "sbpdiff",
    version,
    about = "Field-aligned anisotropic diffusion with SBP-SAT operators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build all operators and run every property check
    Verify(CommonArgs),
    /// Manufactured-solution convergence study
    Converge(CommonArgs),
    /// Integrate to the final time and write snapshots and energy
    Run(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides [output] dir
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random-map seed; overrides the configuration
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(cli: Cli) -> Result<()> {
    let (Command::Verify(args) | Command::Converge(args) | Command::Run(args)) = &cli.command;
    let cfg = load_config(&args.config, args.seed)?;
    let dir = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let out = Output::new(&cfg, dir)?;
    match cli.command {
        Command::Verify(_) => cmd_verify(&cfg, &out).map(drop),
        Command::Converge(_) => cmd_converge(&cfg, &out).map(drop),
        Command::Run(_) => cmd_run(&cfg, &out).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
