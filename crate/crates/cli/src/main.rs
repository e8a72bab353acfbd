//! `remaster`: restore and colorize PNG frame sequences, synthesize
//! degradations, train and evaluate.

mod degrade;
mod eval;
mod failure;
mod pad;
mod remaster;
mod synth;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use failure::{CliResult, Classify, Failure};

pub const SCHEMA: u32 = 1;

#[derive(Parser)]
#[command(name = "remaster", version, about = "Restoration and reference-based colorization of old film")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Restore a greyscale frame sequence and colorize it from reference images.
    Remaster(remaster::Args),
    /// Apply a random (or replayed) degradation recipe to a clean sequence.
    Degrade(degrade::Args),
    /// Train a model on a directory of clean colour sequences.
    Train(train::Args),
    /// Score a checkpoint on a set of clean colour sequences.
    Eval(eval::Args),
    /// Write procedural colour videos for smoke tests.
    Synth(synth::VideoArgs),
    /// Write a procedural noise bank.
    NoiseBank(synth::BankArgs),
}

/// Worker cap from `REMASTER_THREADS`, defaulting to the logical cores.
pub fn thread_cap() -> CliResult<usize> {
    match std::env::var("REMASTER_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Failure::usage(format!(
                "REMASTER_THREADS must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).data(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value).data(|| "serialising JSON".into())?;
    std::fs::write(path, text + "\n").data(|| format!("writing {}", path.display()))
}

pub fn load_bank(dir: &Path) -> CliResult<remaster_core::degrade::NoiseBank> {
    let bank = remaster_core::degrade::NoiseBank::load_dir(dir)
        .data(|| format!("reading noise bank {}", dir.display()))?;
    if bank.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!(
            "noise bank {} contains no PNG images",
            dir.display()
        )));
    }
    Ok(bank)
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Remaster(a) => remaster::run(a),
        Command::Degrade(a) => degrade::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Synth(a) => synth::run_videos(a),
        Command::NoiseBank(a) => synth::run_bank(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("remaster: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
