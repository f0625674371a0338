//! `rectflow` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rectflow::Error;

use crate::artifacts::DataError;
use crate::config::{parse_pair, RunConfig, UsageError};

#[derive(Parser, Debug)]
#[command(
    name = "rectflow",
    version,
    about = "Rectified-flow training, sampling and LiDAR tooling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Key-value config file (`key=value` per line).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (same as `out=DIR`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Config overrides, highest precedence.
    #[arg(value_name = "KEY=VALUE", value_parser = parse_pair)]
    set: Vec<(String, String)>,
    /// Print the resolved config and exit without running.
    #[arg(long)]
    show_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Initial flow matching (1-RF) on a toy set or range images.
    Train(RunArgs),
    /// Generate ODE-coupled pairs from a 1-RF parent and train 2-RF.
    Reflow(RunArgs),
    /// k-step timestep distillation of a 1-RF or 2-RF parent.
    Distill(RunArgs),
    /// Draw samples (or integrate given latents) with a checkpoint.
    Sample(RunArgs),
    /// Map data samples back to latents.
    Invert(RunArgs),
    /// Invert two samples and decode a slerp chain between their latents.
    Interp(RunArgs),
    /// Convert point clouds to range images and back.
    Project(RunArgs),
    /// Compare two sample sets.
    Eval(RunArgs),
    /// Trajectory curvature profile of a checkpoint.
    Curvature(RunArgs),
}

impl Command {
    fn split(self) -> (&'static str, RunArgs) {
        match self {
            Command::Train(a) => ("train", a),
            Command::Reflow(a) => ("reflow", a),
            Command::Distill(a) => ("distill", a),
            Command::Sample(a) => ("sample", a),
            Command::Invert(a) => ("invert", a),
            Command::Interp(a) => ("interp", a),
            Command::Project(a) => ("project", a),
            Command::Eval(a) => ("eval", a),
            Command::Curvature(a) => ("curvature", a),
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    if err.downcast_ref::<DataError>().is_some() || err.downcast_ref::<std::io::Error>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() || matches!(e, Error::Domain { .. }) => 3,
        Some(Error::InvalidArgument(_) | Error::Stage(_) | Error::Config(_)) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (name, args) = cli.command.split();
    let mut overrides = Vec::new();
    if let Some(out) = &args.out {
        overrides.push(("out".to_string(), out.display().to_string()));
    }
    overrides.extend(args.set);
    let cfg = RunConfig::resolve(
        name,
        &commands::defaults(name),
        args.config.as_deref(),
        &overrides,
    )?;
    if args.show_config {
        print!("{}", cfg.canonical());
        println!("config_digest {}", cfg.digest());
        return Ok(());
    }
    commands::run(name, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
