use std::path::PathBuf;

use remaster_core::degrade::synth::synthetic_video;
use remaster_core::degrade::NoiseBank;
use remaster_core::frames;

use crate::failure::{CliResult, Classify, Failure};

#[derive(clap::Args)]
pub struct VideoArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    videos: usize,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    width: u32,
    #[arg(long, default_value_t = 64)]
    height: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
pub struct BankArgs {
    #[arg(long)]
    out: PathBuf,
    /// Images of each procedural kind (fractal, grain, scratch, dust).
    #[arg(long, default_value_t = 4)]
    per_kind: usize,
    #[arg(long, default_value_t = 256)]
    extent: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn run_videos(a: VideoArgs) -> CliResult {
    if a.frames == 0 || a.width == 0 || a.height == 0 {
        return Err(Failure::usage("--frames, --width and --height must be positive"));
    }
    for v in 0..a.videos {
        let clip = synthetic_video(a.seed.wrapping_add(v as u64), a.frames, a.width, a.height);
        let dir = a.out.join(format!("video_{v:03}"));
        frames::write_sequence(&dir, &clip).data(|| format!("writing {}", dir.display()))?;
    }
    println!("wrote {} videos to {}", a.videos, a.out.display());
    Ok(())
}

pub fn run_bank(a: BankArgs) -> CliResult {
    let bank = NoiseBank::generated(a.per_kind, a.extent, a.seed).map_err(|e| Failure::usage(e.to_string()))?;
    bank.save_dir(&a.out).data(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} noise images to {}", bank.len(), a.out.display());
    Ok(())
}
