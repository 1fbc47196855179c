use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pgvem::cli::{self, Command, EXIT_USAGE};
use pgvem::config::RunConfig;

/// pGVEM estimation for the multidimensional generalized partial credit model.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// fit | simulate | evaluate | sweep | bootstrap | validate
    command: String,
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable), e.g. --set dim=3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    fit_dir: Option<PathBuf>,
    #[arg(long)]
    truth_dir: Option<PathBuf>,
    /// Sidecar file of item,categories lines.
    #[arg(long)]
    categories: Option<PathBuf>,
    /// Delete rows with missing values instead of rejecting the file.
    #[arg(long)]
    drop_incomplete: bool,
    /// Also write θ estimates and Σ_i diagonals.
    #[arg(long)]
    emit_theta: bool,
}

fn build(args: &Args) -> pgvem::Result<(Command, RunConfig)> {
    let command: Command = args.command.parse()?;
    let mut config = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        config.apply_override(o)?;
    }
    let paths = [
        ("data", &args.data),
        ("out", &args.out),
        ("fit_dir", &args.fit_dir),
        ("truth_dir", &args.truth_dir),
        ("categories_file", &args.categories),
    ];
    for (key, value) in paths {
        if let Some(p) = value {
            config.set(key, &p.display().to_string())?;
        }
    }
    if args.drop_incomplete {
        config.drop_incomplete = true;
    }
    if args.emit_theta {
        config.emit_theta = true;
    }
    Ok((command, config))
}

fn main() -> ExitCode {
    let args = Args::parse();
    cli::configure_threads();
    let code = match build(&args) {
        Ok((command, config)) => cli::run(command, &config),
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    };
    ExitCode::from(code as u8)
}
