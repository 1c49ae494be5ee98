use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rdmc::harness::{run_experiment, score_check, ExperimentConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "rdmc", about = "Reverse diffusion Monte Carlo experiments", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the samplers in a config and write trace.csv, config_resolved.toml and mmd.svg.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory in the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print estimator error against an oracle score for each budget.
    ScoreCheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the version.
    Version,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn exit_for(e: &rdmc::Error) -> u8 {
    if e.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("RDMC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("RDMC_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn load(path: &std::path::Path) -> Result<ExperimentConfig, ExitCode> {
    // An unreadable config file is the user's to fix, so it counts as a config error.
    ExperimentConfig::load(path).map_err(|e| fail(EXIT_CONFIG, e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        return fail(EXIT_CONFIG, msg);
    }
    match cli.command {
        Command::Version => {
            println!("rdmc {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
        Command::Run { config, seed, out_dir } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            match run_experiment(&cfg) {
                Ok(record) => {
                    for run in &record.runs {
                        println!(
                            "{}: {} steps, {} gradient evaluations, {} density evaluations{}",
                            run.name,
                            run.final_step(),
                            run.ledger.grad_evals,
                            run.ledger.f_evals,
                            if run.truncated { " (stopped by budget cap)" } else { "" }
                        );
                    }
                    println!("wrote {}", cfg.out_dir.join("trace.csv").display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(exit_for(&e), e),
            }
        }
        Command::ScoreCheck { config } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match score_check(&cfg) {
                Ok(table) => {
                    println!("# oracle: {} score {:?}", table.oracle, table.oracle_score);
                    print!("{}", table.to_csv());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(exit_for(&e), e),
            }
        }
    }
}
