//! PSNR under channel masks and the benchmark driver.
//!
//! PSNR is measured on the normalised Lab planes (peak 1): luminance only
//! for restoration, the two chrominance planes for colorization and all
//! three for remastering. A perfect match reports [`PSNR_CAP`].

use std::fmt::Write as _;
use std::ops::Range;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace;
use crate::degrade::{apply_recipe, DegradeRecipe, NoiseBank, Video};
use crate::error::{Error, Result};
use crate::networks::RemasterModel;
use crate::tensor::{Dims5, Mode, Tensor5};

pub const REPORT_SCHEMA: u32 = 1;
/// Reported instead of infinity when the error is zero; also the upper
/// bound of every reported value.
pub const PSNR_CAP: f64 = 99.0;
pub const CHUNK_LEN: usize = 15;
pub const CHUNK_OVERLAP: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Restoration,
    Colorization,
    Remastering,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Restoration => "restoration",
            EvalMode::Colorization => "colorization",
            EvalMode::Remastering => "remastering",
        }
    }
}

/// Luminance `(1,1,T,H,W)` and chrominance `(1,2,T,H,W)` of a clip.
#[derive(Clone, Debug, PartialEq)]
pub struct LabVideo {
    pub l: Tensor5,
    pub ab: Tensor5,
}

impl LabVideo {
    pub fn from_frames(frames: &[RgbImage]) -> Result<Self> {
        let (l, ab) = colorspace::frames_to_lab(frames)?;
        Ok(Self { l, ab })
    }
}

fn sq_err(a: &Tensor5, b: &Tensor5, op: &'static str) -> Result<(f64, usize)> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.dims(),
            right: b.dims(),
        });
    }
    let s = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
        .sum();
    Ok((s, a.numel()))
}

/// Mean squared error over the planes selected by `mode`.
pub fn mse(pred: &LabVideo, target: &LabVideo, mode: EvalMode) -> Result<f64> {
    let (sl, nl) = sq_err(&pred.l, &target.l, "psnr")?;
    let (sab, nab) = sq_err(&pred.ab, &target.ab, "psnr")?;
    let (s, n) = match mode {
        EvalMode::Restoration => (sl, nl),
        EvalMode::Colorization => (sab, nab),
        EvalMode::Remastering => (sl + sab, nl + nab),
    };
    Ok(s / n.max(1) as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(pred: &LabVideo, target: &LabVideo, mode: EvalMode) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, target, mode)?))
}

/// A window of frames run through the model in one forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub frames: Range<usize>,
    /// Frames whose output is taken from this chunk.
    pub keep: Range<usize>,
}

/// Overlapping windows of at most `len` frames covering `0..total`. Each
/// frame is kept from the window in which it lies most centrally.
pub fn plan_chunks(total: usize, len: usize, overlap: usize) -> Vec<Chunk> {
    if total == 0 {
        return Vec::new();
    }
    let len = len.max(1).min(total);
    let stride = len.saturating_sub(overlap).max(1);
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|&s| s + len < total).collect();
    starts.push(total - len);
    starts.dedup();
    let owner = |t: usize| -> usize {
        let mut best = (0, 0);
        for (k, &s) in starts.iter().enumerate() {
            if t < s || t >= s + len {
                continue;
            }
            let margin = (t - s).min(s + len - 1 - t) + 1;
            if margin > best.1 {
                best = (k, margin);
            }
        }
        best.0
    };
    let mut chunks: Vec<Chunk> = starts
        .iter()
        .map(|&s| Chunk {
            frames: s..s + len,
            keep: 0..0,
        })
        .collect();
    let mut t = 0;
    while t < total {
        let k = owner(t);
        let begin = t;
        while t < total && owner(t) == k {
            t += 1;
        }
        chunks[k].keep = begin..t;
    }
    chunks.retain(|c| !c.keep.is_empty());
    chunks
}

/// Frames `range` of a `(B,C,T,H,W)` tensor.
pub fn slice_time(t: &Tensor5, range: Range<usize>) -> Tensor5 {
    let d = t.dims();
    Tensor5::from_fn(Dims5 { t: range.len(), ..d }, |i| {
        t.at([i[0], i[1], range.start + i[2], i[3], i[4]])
    })
}

/// Concatenates along time.
pub fn concat_time(parts: &[Tensor5]) -> Result<Tensor5> {
    let first = parts.first().ok_or(Error::EmptyDataset)?.dims();
    for p in parts {
        let d = p.dims();
        if (d.b, d.c, d.h, d.w) != (first.b, first.c, first.h, first.w) {
            return Err(Error::ShapeMismatch {
                op: "concat_time",
                left: first,
                right: d,
            });
        }
    }
    let t: usize = parts.iter().map(|p| p.dims().t).sum();
    let mut owner = Vec::with_capacity(t);
    for (k, p) in parts.iter().enumerate() {
        owner.extend((0..p.dims().t).map(|i| (k, i)));
    }
    Ok(Tensor5::from_fn(Dims5 { t, ..first }, |i| {
        let (k, ti) = owner[i[2]];
        parts[k].at([i[0], i[1], ti, i[3], i[4]])
    }))
}

/// Runs `f` on every chunk of `x` and stitches the kept frames.
pub fn run_chunked(
    x: &Tensor5,
    chunk_len: usize,
    overlap: usize,
    mut f: impl FnMut(&Tensor5, &Chunk) -> Result<Tensor5>,
) -> Result<Tensor5> {
    let mut parts = Vec::new();
    for c in plan_chunks(x.dims().t, chunk_len, overlap) {
        let y = f(&slice_time(x, c.frames.clone()), &c)?;
        let lo = c.keep.start - c.frames.start;
        parts.push(slice_time(&y, lo..lo + c.keep.len()));
    }
    concat_time(&parts)
}

/// Location of a chunk within the benchmark.
#[derive(Clone, Copy, Debug)]
pub struct ChunkContext {
    pub video: usize,
    /// First frame of the chunk within the evaluated window.
    pub start: usize,
}

pub trait VideoModel: Sync {
    /// Restored luminance for a degraded `(1,1,T,H,W)` chunk.
    fn restore(&self, x: &Tensor5, ctx: ChunkContext) -> Result<Tensor5>;
    /// Chrominance `(1,2,T,H,W)` for a luminance chunk.
    fn colorize(&self, luma: &Tensor5, refs: Option<&Tensor5>, ctx: ChunkContext) -> Result<Tensor5>;
}

impl VideoModel for RemasterModel {
    fn restore(&self, x: &Tensor5, _: ChunkContext) -> Result<Tensor5> {
        let mut g = self.graph(Mode::Eval);
        let xv = g.input(x.clone().with_requires_grad(false))?;
        let y = RemasterModel::preprocess(self, &mut g, xv)?;
        Ok(g.value(y).clone())
    }

    fn colorize(&self, luma: &Tensor5, refs: Option<&Tensor5>, _: ChunkContext) -> Result<Tensor5> {
        let mut g = self.graph(Mode::Eval);
        let lv = g.input(luma.clone().with_requires_grad(false))?;
        let rv = refs.map(|r| g.input(r.clone().with_requires_grad(false))).transpose()?;
        let y = RemasterModel::colorize(self, &mut g, lv, rv)?;
        Ok(g.value(y).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// 90 frames, first frame as the only reference.
    #[serde(rename = "90x1")]
    Frames90Ref1,
    /// 300 frames, every 60th frame as a reference.
    #[serde(rename = "300x5")]
    Frames300Ref5,
}

impl Regime {
    pub fn frames(self) -> usize {
        match self {
            Regime::Frames90Ref1 => 90,
            Regime::Frames300Ref5 => 300,
        }
    }

    /// Reference positions relative to the first evaluated frame.
    pub fn reference_offsets(self) -> Vec<usize> {
        match self {
            Regime::Frames90Ref1 => vec![0],
            Regime::Frames300Ref5 => (0..5).map(|k| 60 * k).collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Frames90Ref1 => "90x1",
            Regime::Frames300Ref5 => "300x5",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "90x1" => Some(Regime::Frames90Ref1),
            "300x5" => Some(Regime::Frames300Ref5),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub frames: usize,
    pub reference_offsets: Vec<usize>,
    pub mode: EvalMode,
    pub seed: u64,
    pub chunk_len: usize,
    pub chunk_overlap: usize,
    pub threads: usize,
}

impl BenchmarkConfig {
    pub fn new(regime: Regime, mode: EvalMode, seed: u64) -> Self {
        Self {
            frames: regime.frames(),
            reference_offsets: regime.reference_offsets(),
            mode,
            seed,
            chunk_len: CHUNK_LEN,
            chunk_overlap: CHUNK_OVERLAP,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub id: usize,
    pub psnr_db: f64,
    pub frames: usize,
    /// First frame of the evaluated window within the source video.
    pub start: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub mode: EvalMode,
    pub frames: usize,
    pub reference_offsets: Vec<usize>,
    pub seed: u64,
    pub per_video: Vec<VideoScore>,
    pub mean_psnr_db: f64,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} | {} frames | references at {:?} | seed {}",
            self.mode.name(),
            self.frames,
            self.reference_offsets,
            self.seed
        );
        let _ = writeln!(s, "{:>6} {:>7} {:>7} {:>10}", "video", "start", "frames", "PSNR (dB)");
        for v in &self.per_video {
            let _ = writeln!(s, "{:>6} {:>7} {:>7} {:>10.3}", v.id, v.start, v.frames, v.psnr_db);
        }
        let _ = writeln!(s, "{:>6} {:>7} {:>7} {:>10.3}", "mean", "", "", self.mean_psnr_db);
        s
    }
}

/// The frames, references and degraded input evaluated for one video.
#[derive(Clone, Debug)]
pub struct EvalCase {
    pub id: usize,
    pub start: usize,
    pub target: LabVideo,
    pub degraded: Tensor5,
    pub references: Option<Tensor5>,
}

/// Window start of every video, drawn from `seed`.
pub fn window_starts(videos: &[Video], frames: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    videos
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if v.frames.len() < frames {
                return Err(Error::VideoTooShort {
                    video: i,
                    frames: v.frames.len(),
                    required: frames,
                });
            }
            Ok(rng.random_range(0..=v.frames.len() - frames))
        })
        .collect()
}

pub fn prepare_cases(videos: &[Video], bank: &NoiseBank, cfg: &BenchmarkConfig) -> Result<Vec<EvalCase>> {
    if videos.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&o) = cfg.reference_offsets.iter().find(|&&o| o >= cfg.frames) {
        return Err(Error::InvalidInput {
            op: "benchmark",
            reason: format!("reference offset {o} lies outside the {}-frame window", cfg.frames),
        });
    }
    let starts = window_starts(videos, cfg.frames, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6465_6772_6164_65);
    let mut cases = Vec::with_capacity(videos.len());
    for (id, (v, &start)) in videos.iter().zip(&starts).enumerate() {
        let clip = &v.frames[start..start + cfg.frames];
        let recipe = DegradeRecipe::draw_deterioration(rng.random(), cfg.frames);
        let degraded = if cfg.mode == EvalMode::Colorization {
            None
        } else {
            Some(apply_recipe(clip, &[], bank, &recipe)?.x)
        };
        let target = LabVideo::from_frames(clip)?;
        let refs: Vec<RgbImage> = cfg.reference_offsets.iter().map(|&o| clip[o].clone()).collect();
        let references = if refs.is_empty() {
            None
        } else {
            Some(colorspace::images_to_lab(&refs)?)
        };
        cases.push(EvalCase {
            id,
            start,
            degraded: degraded.unwrap_or_else(|| target.l.clone()),
            target,
            references,
        });
    }
    Ok(cases)
}

/// Model output for one case under `mode`. Colorization is fed the clean
/// luminance; remastering colorizes the restored luminance.
pub fn predict(model: &dyn VideoModel, case: &EvalCase, cfg: &BenchmarkConfig) -> Result<LabVideo> {
    let refs = case.references.as_ref();
    let restore = |x: &Tensor5| {
        run_chunked(x, cfg.chunk_len, cfg.chunk_overlap, |c, chunk| {
            model.restore(c, ChunkContext { video: case.id, start: chunk.frames.start })
        })
    };
    let colorize = |l: &Tensor5| {
        run_chunked(l, cfg.chunk_len, cfg.chunk_overlap, |c, chunk| {
            model.colorize(c, refs, ChunkContext { video: case.id, start: chunk.frames.start })
        })
    };
    Ok(match cfg.mode {
        EvalMode::Restoration => LabVideo {
            l: restore(&case.degraded)?,
            ab: case.target.ab.clone(),
        },
        EvalMode::Colorization => LabVideo {
            l: case.target.l.clone(),
            ab: colorize(&case.target.l)?,
        },
        EvalMode::Remastering => {
            let l = restore(&case.degraded)?;
            let ab = colorize(&l)?;
            LabVideo { l, ab }
        }
    })
}

fn score(model: &dyn VideoModel, case: &EvalCase, cfg: &BenchmarkConfig) -> Result<VideoScore> {
    let pred = predict(model, case, cfg)?;
    Ok(VideoScore {
        id: case.id,
        psnr_db: psnr(&pred, &case.target, cfg.mode)?,
        frames: cfg.frames,
        start: case.start,
    })
}

pub fn evaluate_cases(model: &dyn VideoModel, cases: &[EvalCase], cfg: &BenchmarkConfig) -> Result<EvalReport> {
    let threads = cfg.threads.max(1).min(cases.len().max(1));
    let mut per_video: Vec<VideoScore> = if threads == 1 {
        cases.iter().map(|c| score(model, c, cfg)).collect::<Result<_>>()?
    } else {
        let per = cases.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = cases
                .chunks(per)
                .map(|part| s.spawn(move || part.iter().map(|c| score(model, c, cfg)).collect::<Result<Vec<_>>>()))
                .collect();
            let mut all = Vec::new();
            for h in handles {
                all.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, Error>(all)
        })?
    };
    per_video.sort_by_key(|v| v.id);
    let mean = per_video.iter().map(|v| v.psnr_db).sum::<f64>() / per_video.len().max(1) as f64;
    Ok(EvalReport {
        schema: REPORT_SCHEMA,
        mode: cfg.mode,
        frames: cfg.frames,
        reference_offsets: cfg.reference_offsets.clone(),
        seed: cfg.seed,
        per_video,
        mean_psnr_db: mean,
    })
}

/// Samples a window from every video, degrades it with `bank`, runs the
/// model and scores it.
pub fn run_benchmark(
    videos: &[Video],
    model: &dyn VideoModel,
    bank: &NoiseBank,
    cfg: &BenchmarkConfig,
) -> Result<EvalReport> {
    let cases = prepare_cases(videos, bank, cfg)?;
    evaluate_cases(model, &cases, cfg)
}
