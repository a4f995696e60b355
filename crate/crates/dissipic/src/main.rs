use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dissipic::commands::{self, Overrides};

#[derive(Parser)]
#[command(name = "dissipic", version, about = "Certify, synthesize and train dissipative implicit neural network controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed of the training or simulation section.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict synthesis to LTI controllers.
    #[arg(long, global = true)]
    lti: bool,
    /// Coupling threshold of the storage partition.
    #[arg(long = "t-rs", global = true)]
    t_rs: Option<f64>,
    /// Allowed distance as a multiple of the closest feasible distance.
    #[arg(long, global = true)]
    backoff: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a storage certificate of a closed loop.
    Verify { config: PathBuf },
    /// Synthesize a certified controller.
    Synthesize { config: PathBuf },
    /// Train a controller while keeping it certified.
    Train { config: PathBuf },
    /// Write rollout or frequency-response data.
    Simulate { config: PathBuf },
}

fn main() -> ExitCode {
    // Exit code 2 means "infeasible", so usage errors exit with 1.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let ov = Overrides { out: cli.out, seed: cli.seed, lti: cli.lti, t_rs: cli.t_rs, backoff: cli.backoff };
    let result = match &cli.command {
        Command::Verify { config } => commands::cmd_verify(config, ov),
        Command::Synthesize { config } => commands::cmd_synthesize(config, ov),
        Command::Train { config } => commands::cmd_train(config, ov),
        Command::Simulate { config } => commands::cmd_simulate(config, ov),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.message());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
