use std::path::PathBuf;

use remaster_core::degrade::{Dataset, NoiseBank, SampleGenerator, TrainingSample, CLIP_LEN};
use remaster_core::networks::{ModelConfig, RemasterModel, COLOR_MULTIPLE};
use remaster_core::training::{
    self, checkpoint, csv_line, LossConfig, RunManifest, Schedule, TrainConfig, CSV_HEADER,
};

use crate::failure::{CliResult, Classify, Failure};

#[derive(clap::Args)]
pub struct Args {
    /// Directory with one sub-directory of frames per video.
    #[arg(long)]
    data: PathBuf,
    /// Noise PNGs; a procedural bank seeded from --seed is used when omitted.
    #[arg(long)]
    noise_bank: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    iters_phase1: usize,
    #[arg(long, default_value_t = 0)]
    iters_phase2: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path; the manifest and loss log are written beside it.
    #[arg(long)]
    out: PathBuf,
    /// Divides every hidden channel count (1 = full model).
    #[arg(long, default_value_t = 1)]
    width_divisor: usize,
    /// Side of the square training crops.
    #[arg(long, default_value_t = 256)]
    crop: u32,
    /// Hold out every k-th video for validation (0 disables validation).
    #[arg(long, default_value_t = 10)]
    val_every_video: usize,
    #[arg(long, default_value_t = 8)]
    val_samples: usize,
    /// Optimiser steps between validations (default: a twentieth of each phase).
    #[arg(long)]
    val_interval: Option<usize>,
}

fn mix(seed: u64, stream: u64, i: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn run(a: Args) -> CliResult {
    if a.crop == 0 || a.crop as usize % COLOR_MULTIPLE != 0 {
        return Err(Failure::usage(format!("--crop must be a positive multiple of {COLOR_MULTIPLE}")));
    }
    if a.batch == 0 {
        return Err(Failure::usage("--batch must be at least 1"));
    }
    let loss = LossConfig { beta: a.beta };
    loss.validate().map_err(|e| Failure::usage(format!("--beta: {e}")))?;
    let model_cfg = ModelConfig {
        seed: a.seed,
        ..ModelConfig::default().with_width_divisor(a.width_divisor)
    };
    model_cfg
        .validate()
        .map_err(|e| Failure::usage(format!("--width-divisor: {e}")))?;

    let data = Dataset::load_dir(&a.data).data(|| format!("reading videos from {}", a.data.display()))?;
    if data.is_empty() {
        return Err(Failure::Data(anyhow::anyhow!("{} holds no video directories", a.data.display())));
    }
    let total_videos = data.len();
    let (train_set, val_set) = if a.val_every_video == 0 {
        (data, Dataset::default())
    } else {
        data.split_validation(a.val_every_video)
    };
    let bank = match &a.noise_bank {
        Some(dir) => crate::load_bank(dir)?,
        None => NoiseBank::generated(4, a.crop.max(64), a.seed).data(|| "generating a noise bank".into())?,
    };

    let gen = SampleGenerator {
        dataset: &train_set,
        bank: &bank,
        size: a.crop,
        clip_len: CLIP_LEN,
    };
    let val_gen = SampleGenerator {
        dataset: &val_set,
        ..gen
    };
    let val: Vec<TrainingSample> = if val_set.is_empty() {
        Vec::new()
    } else {
        (0..a.val_samples as u64)
            .map(|i| val_gen.sample(mix(a.seed, 2, i)).map(|(s, _)| s))
            .collect::<Result<_, _>>()
            .data(|| "building validation samples".into())?
    };

    let cfg = TrainConfig {
        schedule: Schedule {
            phase1_iters: a.iters_phase1,
            phase2_iters: a.iters_phase2,
            batch: a.batch,
        },
        loss,
        val_every: a.val_interval,
        ..TrainConfig::default()
    };
    let mut model = RemasterModel::new(model_cfg).map_err(|e| Failure::usage(e.to_string()))?;

    let log_path = crate::sibling(&a.out, ".log.csv");
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).data(|| format!("creating {}", dir.display()))?;
    }
    let mut csv = format!("{CSV_HEADER}\n");
    let source = |i: u64| gen.sample(mix(a.seed, 1, i)).map(|(s, _)| s);
    let report = training::train(&mut model, &cfg, &source, &val, |row| {
        csv.push_str(&csv_line(row));
        csv.push('\n');
        if row.val_loss.is_some() || row.iter % 100 == 0 {
            eprintln!("{}", csv_line(row));
        }
    })
    .data(|| "training".into())?;
    std::fs::write(&log_path, &csv).data(|| format!("writing {}", log_path.display()))?;

    checkpoint::save(&model.params, &a.out).checkpoint(|| format!("writing {}", a.out.display()))?;
    let manifest = RunManifest {
        schema: crate::SCHEMA,
        model: model_cfg,
        train: cfg,
        seed: a.seed,
        crop_size: a.crop,
        train_videos: train_set.len(),
        val_videos: if val_set.is_empty() { 0 } else { val_set.len() },
        val_samples: val.len(),
        best_iter: report.best_iter,
        best_val_loss: report.best_val,
        trainable_parameters: model.params.trainable_count(),
    };
    crate::write_json(&crate::sibling(&a.out, ".json"), &manifest)?;
    println!(
        "trained on {} of {} videos; kept step {} -> {}",
        train_set.len(),
        total_videos,
        report.best_iter,
        a.out.display()
    );
    Ok(())
}
