use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lattice_cli::{cmd_matrix, cmd_run, cmd_validate, RunOverrides};

/// Replicated-state scenario runner: validate scenario files, execute them
/// deterministically, and check that synchronization and topology choices
/// never change converged results.
#[derive(Parser)]
#[command(name = "lattice", version, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file against the schema and its cross-references.
    Validate { file: PathBuf },
    /// Run a scenario and write a metrics file.
    Run {
        file: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics file path (default: <file>.metrics.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a tab-separated event log for debugging and regression.
        #[arg(long)]
        event_log: Option<PathBuf>,
    },
    /// Run the policy x topology matrix on one trace and verify identical
    /// converged digests across all nine combinations.
    Matrix {
        file: PathBuf,
        /// Directory for per-cell metrics files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LATTICE_LOG", "error"))
        .target(env_logger::Target::Stderr)
        .init();

    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let code = match cli.command {
        Command::Validate { file } => cmd_validate(&file, &mut stdout),
        Command::Run {
            file,
            seed,
            out,
            event_log,
        } => cmd_run(
            &file,
            &RunOverrides {
                seed,
                out,
                event_log,
            },
            &mut stdout,
        ),
        Command::Matrix { file, out } => {
            let corrupt = std::env::var("LATTICE_TEST_FAULT").as_deref() == Ok("corrupt-digest");
            cmd_matrix(&file, out.as_deref(), corrupt, &mut stdout)
        }
    };
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}
