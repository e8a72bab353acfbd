use std::path::PathBuf;

use image::{imageops, RgbImage};
use serde::Serialize;

use remaster_core::colorspace;
use remaster_core::eval::{plan_chunks, run_chunked, ChunkContext, VideoModel, CHUNK_OVERLAP};
use remaster_core::frames;
use remaster_core::networks::COLOR_MULTIPLE;
use remaster_core::training::checkpoint;

use crate::failure::{CliResult, Classify, Failure};
use crate::pad::{self, Padding};

#[derive(clap::Args)]
pub struct Args {
    /// Directory of frames named frame_0000001.png, frame_0000002.png, ...
    #[arg(long)]
    input: PathBuf,
    /// Directory of colour reference images, used in file-name order.
    #[arg(long)]
    refs: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Frames per forward pass.
    #[arg(long, default_value_t = 15)]
    chunk: usize,
    /// Write only the restored luminance.
    #[arg(long)]
    no_color: bool,
}

#[derive(Serialize)]
struct ChunkEntry {
    start: usize,
    end: usize,
    keep_start: usize,
    keep_end: usize,
}

#[derive(Serialize)]
struct Manifest {
    schema: u32,
    input: PathBuf,
    checkpoint: PathBuf,
    width_divisor: usize,
    frames: usize,
    width: u32,
    height: u32,
    padding: Padding,
    padding_mode: &'static str,
    chunk: usize,
    overlap: usize,
    chunks: Vec<ChunkEntry>,
    /// `"reference"` or `"automatic"` (no references given).
    colorization: &'static str,
    references: Vec<PathBuf>,
    /// References whose size differed from the frames and were resized.
    resized_references: usize,
    luminance_dir: PathBuf,
    color_dir: Option<PathBuf>,
}

pub fn run(a: Args) -> CliResult {
    if a.chunk == 0 {
        return Err(Failure::usage("--chunk must be at least 1"));
    }
    let clip = frames::read_sequence(&a.input).data(|| format!("reading frames from {}", a.input.display()))?;
    let (width, height) = clip[0].dimensions();
    let padding = Padding::to_multiple(width, height, COLOR_MULTIPLE as u32);
    let padded: Vec<RgbImage> = clip.iter().map(|f| pad::reflect_pad(f, padding)).collect();

    let (ref_paths, refs) = match &a.refs {
        Some(dir) => {
            let paths = frames::list_pngs(dir).data(|| format!("listing references in {}", dir.display()))?;
            if paths.is_empty() {
                return Err(Failure::Data(anyhow::anyhow!(
                    "reference directory {} contains no PNG images; omit --refs for automatic colorization",
                    dir.display()
                )));
            }
            let imgs = paths
                .iter()
                .map(|p| frames::read_rgb(p))
                .collect::<Result<Vec<_>, _>>()
                .data(|| "reading reference images".into())?;
            (paths, imgs)
        }
        None => (Vec::new(), Vec::new()),
    };
    let resized = refs.iter().filter(|r| r.dimensions() != (width, height)).count();
    let refs: Vec<RgbImage> = refs
        .iter()
        .map(|r| {
            let r = if r.dimensions() == (width, height) {
                r.clone()
            } else {
                imageops::resize(r, width, height, imageops::FilterType::CatmullRom)
            };
            pad::reflect_pad(&r, padding)
        })
        .collect();

    let model = checkpoint::load_model(&a.checkpoint)
        .checkpoint(|| format!("loading {}", a.checkpoint.display()))?;

    let (luma, _) = colorspace::frames_to_lab(&padded).data(|| "converting frames".into())?;
    let ref_tensor = if refs.is_empty() {
        None
    } else {
        Some(colorspace::images_to_lab(&refs).data(|| "converting references".into())?)
    };
    let ctx = |start| ChunkContext { video: 0, start };
    let overlap = CHUNK_OVERLAP.min(a.chunk.saturating_sub(1));
    let restored = run_chunked(&luma, a.chunk, overlap, |c, ch| model.restore(c, ctx(ch.frames.start)))
        .data(|| "running the restoration network".into())?;

    let luma_dir = a.out.join("luminance");
    let grey: Vec<_> = colorspace::luma_to_grey(&restored)
        .iter()
        .map(|g| pad::crop(g, padding, width, height))
        .collect();
    frames::write_grey_sequence(&luma_dir, &grey).data(|| format!("writing {}", luma_dir.display()))?;

    let color_dir = if a.no_color {
        None
    } else {
        let chroma = run_chunked(&restored, a.chunk, overlap, |c, ch| {
            VideoModel::colorize(&model, c, ref_tensor.as_ref(), ctx(ch.frames.start))
        })
        .data(|| "running the colorization network".into())?;
        let rgb: Vec<RgbImage> = colorspace::compose_output(&restored, &chroma)
            .data(|| "composing colour frames".into())?
            .iter()
            .map(|f| pad::crop(f, padding, width, height))
            .collect();
        let dir = a.out.join("color");
        frames::write_sequence(&dir, &rgb).data(|| format!("writing {}", dir.display()))?;
        Some(dir)
    };

    let manifest = Manifest {
        schema: crate::SCHEMA,
        input: a.input,
        checkpoint: a.checkpoint,
        width_divisor: model.config().width_divisor,
        frames: clip.len(),
        width,
        height,
        padding,
        padding_mode: "reflect",
        chunk: a.chunk,
        overlap,
        chunks: plan_chunks(clip.len(), a.chunk, overlap)
            .into_iter()
            .map(|c| ChunkEntry {
                start: c.frames.start,
                end: c.frames.end,
                keep_start: c.keep.start,
                keep_end: c.keep.end,
            })
            .collect(),
        colorization: if ref_paths.is_empty() { "automatic" } else { "reference" },
        references: ref_paths,
        resized_references: resized,
        luminance_dir: luma_dir,
        color_dir,
    };
    crate::write_json(&a.out.join("manifest.json"), &manifest)?;
    println!(
        "remastered {} frames ({}x{}) into {}",
        manifest.frames,
        width,
        height,
        a.out.display()
    );
    Ok(())
}
