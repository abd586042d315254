use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tamed_bsde::experiment::{
    convergence_study, positivity_study, run_metadata, tree_oracle, verify_taming, CsvTable,
    ExperimentConfig,
};
use tamed_bsde::Error;

#[derive(Parser)]
#[command(
    name = "tamed-bsde",
    version,
    about = "Run tamed BSDE scheme experiments from a config file"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the seed of the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output CSV path; overrides `output.path`. Without either the CSV goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Record wallclock times in the convergence report.
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Errors of every scheme on every grid against the fine-grid proxy.
    Converge { config: PathBuf },
    /// Per-step extrema of Y and the step-size condition h L_y < 1.
    Positivity { config: PathBuf },
    /// Assumption checks and boundedness witnesses across the grid ladder.
    VerifyTaming { config: PathBuf },
    /// Path-based scheme against the exact tree recursion.
    TreeOracle { config: PathBuf },
}

impl Command {
    fn config(&self) -> &Path {
        match self {
            Command::Converge { config }
            | Command::Positivity { config }
            | Command::VerifyTaming { config }
            | Command::TreeOracle { config } => config,
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) => 2,
        Error::Io(_) => 3,
        _ => 1,
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn emit(out: Option<&Path>, csv: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, csv)?,
        None => io::stdout().lock().write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(cli.command.config())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.clone().or_else(|| cfg.output_path.clone());
    let out = out.as_deref();

    match &cli.command {
        Command::Converge { .. } => {
            let report = convergence_study(&cfg, cli.timing)?;
            emit(out, &report.to_csv())?;
            if let Some(path) = out {
                fs::write(sidecar(path, ".meta"), run_metadata(&cfg)?)?;
            }
        }
        Command::Positivity { .. } => {
            let study = positivity_study(&cfg)?;
            emit(out, &study.to_csv())?;
            match out {
                Some(path) => {
                    fs::write(
                        sidecar(path, ".conditions.csv"),
                        study.conditions_table().to_csv(),
                    )?;
                    fs::write(sidecar(path, ".meta"), run_metadata(&cfg)?)?;
                }
                None => eprint!("{}", study.conditions_table().to_csv()),
            }
        }
        Command::VerifyTaming { .. } => emit(out, &verify_taming(&cfg)?.to_csv())?,
        Command::TreeOracle { .. } => emit(out, &tree_oracle(&cfg)?.to_csv())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
