use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use musolve::{parse_config, run_pipeline, FailureKind, PipelineKind};

/// Mixed-order fractional Laplacian solver.
///
/// Exit codes: 0 success, 1 I/O failure, 2 config error, 3 hypothesis or
/// certificate failure, 4 numerical failure. Log level via MUSOLVE_LOG.
#[derive(Debug, Parser)]
#[command(name = "musolve", version)]
struct Args {
    /// TOML run config.
    config: PathBuf,
    /// Override `[pipeline].kind`.
    #[arg(long)]
    pipeline: Option<PipelineKind>,
    /// Output directory; beats `[pipeline].output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

const DEFAULT_OUT: &str = "musolve-out";

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MUSOLVE_LOG", "warn")).init();
    let args = Args::parse();

    let mut config = match parse_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("musolve: config error: {e}");
            return ExitCode::from(FailureKind::Config.exit_code() as u8);
        }
    };
    if let Some(kind) = args.pipeline {
        config.pipeline.kind = kind;
        if let Err(e) = config.validate() {
            eprintln!("musolve: config error: {e}");
            return ExitCode::from(FailureKind::Config.exit_code() as u8);
        }
    }
    // Config-relative output paths resolve against the config's directory.
    let out = args.out.unwrap_or_else(|| match &config.pipeline.output_dir {
        Some(dir) if dir.is_relative() => args.config.parent().unwrap_or(Path::new(".")).join(dir),
        Some(dir) => dir.clone(),
        None => PathBuf::from(DEFAULT_OUT),
    });

    let record = run_pipeline(&config, &out);
    match &record.error {
        None => println!("musolve: {} ok -> {}", record.pipeline, out.display()),
        Some(e) => eprintln!("musolve: {} failed: {e}", record.pipeline),
    }
    ExitCode::from(record.exit_code() as u8)
}
