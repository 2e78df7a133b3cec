use std::path::PathBuf;
use std::process::ExitCode;

use adbo::cli::{compare_files, init_logging, parse_config, run_experiment, Overrides};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adbo", version, about = "Asynchronous distributed bilevel optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its trace CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the virtual time two traces need to reach F <= target.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        target: f64,
    },
}

fn main() -> ExitCode {
    init_logging();
    match Cli::parse().command {
        Command::Run { config, seed, out } => {
            let cfg = match parse_config(&config, &Overrides { seed, out }) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match run_experiment(&cfg) {
                Ok(summary) => {
                    println!("{summary}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Compare { a, b, target } => match compare_files(&a, &b, target) {
            Ok(report) => {
                println!("{report}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
