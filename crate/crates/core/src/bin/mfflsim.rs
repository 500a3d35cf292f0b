use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfflsim::experiments;

#[derive(Parser)]
#[command(name = "mfflsim", version, about = "Mean-field simulations of federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario config.
    Run {
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: config `output_dir`, else $MFFLSIM_OUT/<scenario>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Summarise every manifest found below a directory.
    Report {
        dir: PathBuf,
        /// Where to write summary.json and summary.txt (default: `dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, seed, out, threads } => {
            match experiments::run_config_file(&config, seed, threads, out.as_deref()) {
                Ok(run) => {
                    println!("{} -> {}", run.manifest.scenario, run.dir.display());
                    if run.convergence_failed() {
                        eprintln!("error: solver did not converge and the config requires convergence");
                        return ExitCode::from(1);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Report { dir, out } => {
            let result = experiments::collect_manifests(&dir)
                .and_then(|ms| experiments::emit_report(&ms, out.as_deref().unwrap_or(&dir)));
            match result {
                Ok(summary) => {
                    print!("{}", experiments::manifest::render_table(&summary));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
