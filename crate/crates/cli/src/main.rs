use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coorbit_cli::config::validate;
use coorbit_cli::runner::{run_file, RunOptions};

#[derive(Parser)]
#[command(name = "coorbit", version, about = "Discretization of continuous frames via coverings")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the tasks listed in a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config `output` field.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config file without computing anything.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Validate { config } => {
            let d = validate(&config);
            if d.is_empty() {
                println!("ok");
                ExitCode::SUCCESS
            } else {
                for x in &d {
                    eprintln!("{x}");
                }
                ExitCode::from(2)
            }
        }
        Cmd::Run { config, out, seed, threads } => {
            let opts = RunOptions { out, seed };
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("thread pool: {e}");
                    return ExitCode::from(1);
                }
            };
            match pool.install(|| run_file(&config, &opts)) {
                Ok(s) => {
                    println!("wrote {}", s.out_dir.join("report.json").display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
