//! PNG frame sequences on disk.
//!
//! A sequence is a directory of `frame_0000001.png`, `frame_0000002.png`, ...
//! numbered contiguously from 1. Reference and noise directories may use any
//! file names and are read in lexicographic order.

use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

pub fn frame_name(index: usize) -> String {
    format!("frame_{:07}.png", index + 1)
}

fn parse_frame_number(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Every `*.png` directly inside `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| {
        Error::Frames(format!("cannot read directory {}: {e}", dir.display()))
    })?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_rgb8())
}

fn check_uniform(images: &[RgbImage], paths: &[PathBuf]) -> Result<()> {
    if let Some(first) = images.first() {
        let dims = first.dimensions();
        if let Some(i) = images.iter().position(|f| f.dimensions() != dims) {
            let (w, h) = images[i].dimensions();
            return Err(Error::Frames(format!(
                "{} is {w}x{h} but {} is {}x{}",
                paths[i].display(),
                paths[0].display(),
                dims.0,
                dims.1
            )));
        }
    }
    Ok(())
}

/// Reads a numbered frame sequence, checking contiguity and uniform extents.
pub fn read_sequence(dir: &Path) -> Result<Vec<RgbImage>> {
    let paths = list_pngs(dir)?;
    if paths.is_empty() {
        return Err(Error::Frames(format!("no PNG frames in {}", dir.display())));
    }
    for (i, path) in paths.iter().enumerate() {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        match parse_frame_number(name) {
            Some(n) if n == i + 1 => {}
            Some(_) => {
                return Err(Error::Frames(format!(
                    "{} breaks the numbering, expected {}",
                    path.display(),
                    frame_name(i)
                )))
            }
            None => {
                return Err(Error::Frames(format!(
                    "{} is not named like {}",
                    path.display(),
                    frame_name(0)
                )))
            }
        }
    }
    let images = paths.iter().map(|p| read_rgb(p)).collect::<Result<Vec<_>>>()?;
    check_uniform(&images, &paths)?;
    Ok(images)
}

/// Reads every PNG in `dir` in lexicographic order.
pub fn read_images(dir: &Path) -> Result<Vec<RgbImage>> {
    let paths = list_pngs(dir)?;
    let images = paths.iter().map(|p| read_rgb(p)).collect::<Result<Vec<_>>>()?;
    check_uniform(&images, &paths)?;
    Ok(images)
}

pub fn write_sequence(dir: &Path, frames: &[RgbImage]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        let path = dir.join(frame_name(i));
        f.save(&path).map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}

pub fn write_grey_sequence(dir: &Path, frames: &[GrayImage]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        let path = dir.join(frame_name(i));
        f.save(&path).map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}
