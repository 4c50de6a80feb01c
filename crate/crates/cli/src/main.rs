use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use tqhom_cli::{execute, parse_config, CliError, Command, Overrides, ERROR_EXIT};

/// Cell problems, homogenized density tables and thin-film experiments.
#[derive(Debug, Parser)]
#[command(name = "tqhom", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

fn run(args: &Args) -> Result<i32, CliError> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Range(format!("--threads: {e}")))?;
    }
    let text = std::fs::read_to_string(&args.config)
        .map_err(|source| CliError::Io { path: args.config.display().to_string(), source })?;
    let cfg = parse_config(&text)?;
    let outcome = execute(args.command, &cfg, &Overrides { out: args.out.clone(), seed: args.seed })?;
    println!("{}", outcome.summary);
    for a in &outcome.artifacts {
        println!("wrote {}", a.display());
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(ERROR_EXIT as u8)
        }
    }
}
