//! `kerr`: configuration-driven front end for the kerr-core pipelines.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{Command, Run, RunError};
use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "kerr", version, about = "Subwavelength resonances of high-contrast Kerr resonators")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// output directory (overrides `output_dir` in the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// worker threads for dense factorizations (0 = all cores)
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// also write the assembled operator as raw little-endian complex pairs
    #[arg(long)]
    dump_matrices: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Leading eigenpairs of K_D (3D) or K̃_D (2D) and the Krein–Rutman report
    Spectrum(Common),
    /// Linear resonances over the τ sweep
    Linear(Common),
    /// Nonlinear branch of the selected mode up to amplitude.n_max
    Branch(Common),
    /// Symmetry-breaking study of a reflection-symmetric dimer
    Dimer(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (command, common) = match cli.command {
        Cmd::Spectrum(c) => (Command::Spectrum, c),
        Cmd::Linear(c) => (Command::Linear, c),
        Cmd::Branch(c) => (Command::Branch, c),
        Cmd::Dimer(c) => (Command::Dimer, c),
    };
    let mut cfg = match RunConfig::load(&common.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(out) = common.out {
        cfg.output_dir = out;
    }
    kerr_core::set_threads(common.threads);
    let mut run = match Run::create(command, cfg, common.dump_matrices) {
        Ok(run) => run,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let result = run.execute();
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    if let Err(e) = run.write_manifest(result.as_ref().err().map(RunError::to_string)) {
        eprintln!("error: cannot write MANIFEST.json: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(code)
}
