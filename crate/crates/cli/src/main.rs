use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use impulse_cli::commands::{self, Options};
use impulse_cli::Failure;

#[derive(Parser)]
#[command(name = "impulse", version, about = "Impulse-control RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Flags {
    /// Run only this seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

impl From<Flags> for Options {
    fn from(f: Flags) -> Self {
        Options {
            seed: f.seed,
            out: f.out,
            jobs: f.jobs,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one learner per seed and write learning curves and policies.
    Train {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Solve the configured problem exactly.
    Oracle {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Train and evaluate over every value of a list-valued config field.
    Sweep {
        config: PathBuf,
        /// Dotted path of the swept field, e.g. `env.params.k`.
        #[arg(long)]
        axis: String,
        #[command(flatten)]
        flags: Flags,
    },
    /// Run a property suite and write report.csv.
    Verify {
        suite: String,
        #[command(flatten)]
        flags: Flags,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, flags } => {
            for p in commands::train(&config, &flags.into())? {
                println!("{}", p.display());
            }
        }
        Command::Oracle { config, flags } => {
            for p in commands::oracle(&config, &flags.into())? {
                println!("{}", p.display());
            }
        }
        Command::Sweep { config, axis, flags } => {
            for p in commands::sweep(&config, &axis, &flags.into())? {
                println!("{}", p.display());
            }
        }
        Command::Verify { suite, flags } => {
            let checks = commands::verify(&suite, &flags.into())?;
            let mut failed = 0;
            for c in &checks {
                println!(
                    "{} {}: measured {} threshold {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.property,
                    c.measured,
                    c.threshold
                );
                failed += !c.pass as usize;
            }
            if failed > 0 {
                return Err(Failure::Runtime(format!(
                    "{suite}: {failed} of {} checks failed",
                    checks.len()
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
