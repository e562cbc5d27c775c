//! Command-line front end: load a job config (file or shipped preset),
//! run it, write CSV/JSON artifacts into the output directory.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 numerical-integrity
//! failure, 3 acceptance failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use srs_qmetro::config::{preset, JobConfig, PRESET_NAMES};
use srs_qmetro::error::Error;
use srs_qmetro::report::run_command;

#[derive(Parser, Debug)]
#[command(
    name = "srs-qmetro",
    about = "Quantum-enhanced stimulated Raman scattering simulator and sensitivity toolkit",
    version
)]
struct Cli {
    /// Job config file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Shipped preset name (fig2a, fig2b, fig3, fig4).
    #[arg(long)]
    preset: Option<String>,

    /// Output directory for CSV/JSON artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// RNG seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for grid cells; overrides SRS_QMETRO_THREADS.
    #[arg(long)]
    threads: Option<usize>,

    /// List the shipped presets and exit.
    #[arg(long)]
    list_presets: bool,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Io(_) => 1,
        _ => 2,
    }
}

fn run(cli: &Cli) -> Result<u8, (u8, String)> {
    if cli.list_presets {
        for name in PRESET_NAMES {
            println!("{name}");
        }
        return Ok(0);
    }

    let text = match (&cli.config, &cli.preset) {
        (Some(path), None) => std::fs::read_to_string(path)
            .map_err(|e| (1, format!("cannot read {}: {e}", path.display())))?,
        (None, Some(name)) => preset(name).map_err(|e| (1, e.to_string()))?.to_string(),
        (None, None) => return Err((1, "need --config <path> or --preset <name>".into())),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let cfg = JobConfig::from_toml_str(&text).map_err(|e| (1, e.to_string()))?;

    let seed = cli.seed.or(cfg.seed).unwrap_or(1);
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("SRS_QMETRO_THREADS").ok().and_then(|v| v.parse::<usize>().ok())
        })
        .or(cfg.threads)
        .unwrap_or(1)
        .max(1);

    std::fs::create_dir_all(&cli.out)
        .map_err(|e| (1, format!("cannot create {}: {e}", cli.out.display())))?;

    let output = run_command(&cfg, seed, threads)
        .map_err(|e| (exit_code_for(&e), e.to_string()))?;

    for artifact in &output.artifacts {
        let path = cli.out.join(&artifact.filename);
        std::fs::write(&path, &artifact.bytes)
            .map_err(|e| (1, format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    for line in &output.summary {
        println!("{line}");
    }
    Ok(if output.accept_passed { 0 } else { 3 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
