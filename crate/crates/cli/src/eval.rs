use std::path::PathBuf;

use clap::ValueEnum;

use remaster_core::degrade::{Dataset, NoiseBank};
use remaster_core::eval::{run_benchmark, BenchmarkConfig, EvalMode, Regime};
use remaster_core::training::checkpoint;

use crate::failure::{CliResult, Classify, Failure};

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    #[value(name = "90x1")]
    Short,
    #[value(name = "300x5")]
    Long,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Restoration,
    Colorization,
    Remastering,
}

#[derive(clap::Args)]
pub struct Args {
    /// Directory with one sub-directory of frames per video.
    #[arg(long)]
    videos: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum)]
    regime: RegimeArg,
    #[arg(long, value_enum, default_value = "remastering")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Noise PNGs for the deterioration; a procedural bank seeded from
    /// --seed is used when omitted.
    #[arg(long)]
    noise_bank: Option<PathBuf>,
}

pub fn run(a: Args) -> CliResult {
    let regime = match a.regime {
        RegimeArg::Short => Regime::Frames90Ref1,
        RegimeArg::Long => Regime::Frames300Ref5,
    };
    let mode = match a.mode {
        ModeArg::Restoration => EvalMode::Restoration,
        ModeArg::Colorization => EvalMode::Colorization,
        ModeArg::Remastering => EvalMode::Remastering,
    };
    let threads = crate::thread_cap()?;
    let model = checkpoint::load_model(&a.checkpoint)
        .checkpoint(|| format!("loading {}", a.checkpoint.display()))?;
    let data = Dataset::load_dir(&a.videos).data(|| format!("reading videos from {}", a.videos.display()))?;
    if data.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!("{} holds no video directories", a.videos.display())));
    }
    let bank = match &a.noise_bank {
        Some(dir) => crate::load_bank(dir)?,
        None => NoiseBank::generated(4, 256, a.seed ^ 0xE7A1).data(|| "generating a noise bank".into())?,
    };
    let cfg = BenchmarkConfig {
        threads,
        ..BenchmarkConfig::new(regime, mode, a.seed)
    };
    let report = run_benchmark(&data.videos, &model, &bank, &cfg).data(|| "running the benchmark".into())?;
    crate::write_json(&a.out, &report)?;
    print!("{}", report.table());
    Ok(())
}
