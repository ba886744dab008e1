use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use monoglue::cli::{run, ExperimentConfig, Mode, RunOptions};

/// Gluing BPS monopoles into Dirac monopole backgrounds.
#[derive(Debug, Parser)]
#[command(name = "monoglue", version)]
struct Args {
    /// TOML experiment configuration; defaults apply to missing sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Output directory for CSV/JSON/VTK artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Recorded in the manifest; the solvers run single-threaded.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    export_vtk: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let config = match &args.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("monoglue: {e}");
                return ExitCode::from(e.exit_code() as u8);
            }
        },
        None => ExperimentConfig::default(),
    };
    let opts = RunOptions { mode: args.mode, out: args.out, seed: args.seed, threads: args.threads, export_vtk: args.export_vtk };
    match run(&config, &opts) {
        Ok(m) => {
            println!("{}", serde_json::to_string_pretty(&m.summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("monoglue: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
