//! Training-pair synthesis: augmentation of clean colour clips plus additive
//! film deterioration of the greyscale input.
//!
//! Every random choice is drawn up front into a [`DegradeRecipe`], which is
//! serialisable and replays bit-identically through [`apply_recipe`].
//!
//! | transform        | target      | prob | range            |
//! |------------------|-------------|------|------------------|
//! | horizontal flip  | (x,y), z    | 0.5  |                  |
//! | scale + crop     | (x,y)       | 1    | edge U(256, 400) |
//! | rotation         | (x,y)       | 1    | U(-5, 5) degrees |
//! | brightness       | (x,y)       | 0.2  | U(0.8, 1.2)      |
//! | contrast         | (x,y)       | 0.2  | U(0.9, 1.0)      |
//! | JPEG             | x, z        | 0.9  | quality U(15, 40)|
//! | Gaussian noise   | x, z        | 0.1  | sigma 0.04       |
//! | blur             | x           | 0.5  | factor U(2, 4)   |
//! | contrast         | x           | 0.33 | U(0.6, 1.0)      |
//! | scale + crop     | z           | 1    | edge U(256, 320) |
//! | saturation       | z           | 0.1  | U(0.3, 1.0)      |
//!
//! Edge lengths are expressed for a 256 pixel crop and scaled linearly for
//! other crop sizes. Each frame of x additionally receives 1 to 3 noise-bank
//! images, each rescaled (edge U(256, 720)), flipped on either axis with
//! probability 0.5, rotated U(-5, 5) degrees, cropped, weighted by
//! U(0.5, 1.5) and added or subtracted with equal probability.

pub mod noise;
pub mod ops;
pub mod synth;

use std::path::Path;

use image::imageops;
use image::{Rgb32FImage, RgbImage};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::colorspace;
use crate::error::{Error, Result};
use crate::tensor::{Dims5, Tensor5};
pub use noise::{generate_noise, NoiseBank, NoiseKind};
use ops::GreyF;

pub const RECIPE_SCHEMA: u32 = 1;
pub const BASE_EXTENT: f64 = 256.0;
pub const CLIP_LEN: usize = 5;
pub const MAX_REFERENCES: usize = 6;
/// Neighbourhood, in frames, around a clip from which the first reference is
/// taken.
pub const REFERENCE_WINDOW: usize = 5;

pub const FLIP_P: f64 = 0.5;
pub const SCALE_RANGE: (f64, f64) = (256.0, 400.0);
pub const ROTATION_RANGE: (f64, f64) = (-5.0, 5.0);
pub const BRIGHTNESS_P: f64 = 0.2;
pub const BRIGHTNESS_RANGE: (f64, f64) = (0.8, 1.2);
pub const CONTRAST_P: f64 = 0.2;
pub const CONTRAST_RANGE: (f64, f64) = (0.9, 1.0);
pub const JPEG_P: f64 = 0.9;
pub const JPEG_RANGE: (f64, f64) = (15.0, 40.0);
pub const GAUSSIAN_P: f64 = 0.1;
pub const GAUSSIAN_SIGMA: f64 = 0.04;
pub const BLUR_P: f64 = 0.5;
pub const BLUR_RANGE: (f64, f64) = (2.0, 4.0);
pub const X_CONTRAST_P: f64 = 0.33;
pub const X_CONTRAST_RANGE: (f64, f64) = (0.6, 1.0);
pub const REF_SCALE_RANGE: (f64, f64) = (256.0, 320.0);
pub const SATURATION_P: f64 = 0.1;
pub const SATURATION_RANGE: (f64, f64) = (0.3, 1.0);
pub const NOISE_LAYERS: (usize, usize) = (1, 3);
pub const NOISE_SCALE_RANGE: (f64, f64) = (256.0, 720.0);
pub const NOISE_FLIP_P: f64 = 0.5;
pub const NOISE_AMPLITUDE_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub flip: bool,
    /// Shorter edge after scaling, in units of a 256 pixel crop.
    pub edge: f64,
    pub rotation: f64,
    pub crop: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoise {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecipe {
    pub flip: bool,
    pub edge: f64,
    pub crop: [f64; 2],
    pub jpeg_quality: Option<f64>,
    pub gaussian: Option<GaussianNoise>,
    pub saturation: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLayer {
    /// Bank position as a fraction of the bank length.
    pub pick: f64,
    pub edge: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    pub rotation: f64,
    pub crop: [f64; 2],
    pub amplitude: f64,
    /// `+1` adds the noise, `-1` subtracts it.
    pub sign: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradeRecipe {
    pub schema: u32,
    pub seed: u64,
    /// Side of the square training crop.
    pub size: u32,
    /// Joint flip, scale, rotation and crop; `None` keeps frames as they are.
    pub geometry: Option<Geometry>,
    pub brightness: Option<f64>,
    pub contrast: Option<f64>,
    pub jpeg_quality: Option<f64>,
    pub gaussian: Option<GaussianNoise>,
    pub blur: Option<f64>,
    pub x_contrast: Option<f64>,
    /// Noise layers of each input frame.
    pub noise: Vec<Vec<NoiseLayer>>,
    pub references: Vec<ReferenceRecipe>,
}

fn uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    rng.random_range(range.0..range.1)
}

fn maybe(rng: &mut impl Rng, p: f64, range: (f64, f64)) -> Option<f64> {
    // Both values are always drawn so the stream position does not depend on
    // the outcome.
    let fire = rng.random_bool(p);
    let v = uniform(rng, range);
    fire.then_some(v)
}

fn maybe_gaussian(rng: &mut impl Rng) -> Option<GaussianNoise> {
    let fire = rng.random_bool(GAUSSIAN_P);
    let seed = rng.random();
    fire.then_some(GaussianNoise {
        sigma: GAUSSIAN_SIGMA,
        seed,
    })
}

fn crop_draw(rng: &mut impl Rng) -> [f64; 2] {
    [rng.random(), rng.random()]
}

impl DegradeRecipe {
    /// Draws every transform for a clip of `frames` frames with `references`
    /// reference images.
    pub fn draw(seed: u64, frames: usize, references: usize, size: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let geometry = Some(Geometry {
            flip: rng.random_bool(FLIP_P),
            edge: uniform(rng, SCALE_RANGE),
            rotation: uniform(rng, ROTATION_RANGE),
            crop: crop_draw(rng),
        });
        let brightness = maybe(rng, BRIGHTNESS_P, BRIGHTNESS_RANGE);
        let contrast = maybe(rng, CONTRAST_P, CONTRAST_RANGE);
        let jpeg_quality = maybe(rng, JPEG_P, JPEG_RANGE);
        let gaussian = maybe_gaussian(rng);
        let blur = maybe(rng, BLUR_P, BLUR_RANGE);
        let x_contrast = maybe(rng, X_CONTRAST_P, X_CONTRAST_RANGE);
        let noise = (0..frames)
            .map(|_| {
                let n = rng.random_range(NOISE_LAYERS.0..=NOISE_LAYERS.1);
                (0..n)
                    .map(|_| NoiseLayer {
                        pick: rng.random(),
                        edge: uniform(rng, NOISE_SCALE_RANGE),
                        flip_h: rng.random_bool(NOISE_FLIP_P),
                        flip_v: rng.random_bool(NOISE_FLIP_P),
                        rotation: uniform(rng, ROTATION_RANGE),
                        crop: crop_draw(rng),
                        amplitude: uniform(rng, NOISE_AMPLITUDE_RANGE),
                        sign: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                    })
                    .collect()
            })
            .collect();
        let references = (0..references)
            .map(|_| ReferenceRecipe {
                flip: rng.random_bool(FLIP_P),
                edge: uniform(rng, REF_SCALE_RANGE),
                crop: crop_draw(rng),
                jpeg_quality: maybe(rng, JPEG_P, JPEG_RANGE),
                gaussian: maybe_gaussian(rng),
                saturation: maybe(rng, SATURATION_P, SATURATION_RANGE),
            })
            .collect();
        Self {
            schema: RECIPE_SCHEMA,
            seed,
            size,
            geometry,
            brightness,
            contrast,
            jpeg_quality,
            gaussian,
            blur,
            x_contrast,
            noise,
            references,
        }
    }

    /// Input-only deterioration at the native frame size: the joint
    /// transforms are dropped so the clean frames remain the target.
    pub fn draw_deterioration(seed: u64, frames: usize) -> Self {
        Self {
            geometry: None,
            brightness: None,
            contrast: None,
            ..Self::draw(seed, frames, 0, BASE_EXTENT as u32)
        }
    }

    /// A recipe that changes nothing: frames keep their extent and references
    /// are only scaled and centre-cropped.
    pub fn identity(frames: usize, references: usize, size: u32) -> Self {
        Self {
            schema: RECIPE_SCHEMA,
            seed: 0,
            size,
            geometry: None,
            brightness: None,
            contrast: None,
            jpeg_quality: None,
            gaussian: None,
            blur: None,
            x_contrast: None,
            noise: vec![Vec::new(); frames],
            references: (0..references)
                .map(|_| ReferenceRecipe {
                    flip: false,
                    edge: REF_SCALE_RANGE.0,
                    crop: [0.5, 0.5],
                    jpeg_quality: None,
                    gaussian: None,
                    saturation: None,
                })
                .collect(),
        }
    }

    pub fn needs_bank(&self) -> bool {
        self.noise.iter().any(|layers| !layers.is_empty())
    }

    fn scaled_edge(&self, edge: f64) -> u32 {
        ((edge * self.size as f64 / BASE_EXTENT).round() as u32).max(self.size)
    }
}

/// One supervised example.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    /// Degraded greyscale input `(1,1,T,H,W)`.
    pub x: Tensor5,
    /// Clean luminance target `(1,1,T,H,W)`.
    pub y_l: Tensor5,
    /// Clean chrominance target `(1,2,T,H,W)`.
    pub y_ab: Tensor5,
    /// Reference images `(1,3,N,H,W)` in normalised Lab; `N` may be 0.
    pub z: Tensor5,
}

fn lab_planes(frames: &[Rgb32FImage]) -> (Tensor5, Tensor5) {
    let (w, h) = frames[0].dimensions();
    let (w, h, t) = (w as usize, h as usize, frames.len());
    let mut l = Tensor5::zeros(Dims5::new(1, 1, t, h, w));
    let mut ab = Tensor5::zeros(Dims5::new(1, 2, t, h, w));
    let plane = h * w;
    for (ti, f) in frames.iter().enumerate() {
        for (i, px) in f.pixels().enumerate() {
            let lab = colorspace::srgb_to_cielab(px.0.map(|v| v as f64));
            let [lv, a, b] = colorspace::normalise(lab);
            l.data_mut()[ti * plane + i] = lv;
            ab.data_mut()[ti * plane + i] = a;
            ab.data_mut()[(t + ti) * plane + i] = b;
        }
    }
    (l, ab)
}

fn add_gaussian<P: image::Pixel<Subpixel = f32>>(img: &mut ops::Buffer<P>, g: &GaussianNoise, rng: &mut impl Rng) {
    let normal = Normal::new(0.0, g.sigma).expect("non-negative sigma");
    for v in img.iter_mut() {
        *v = (*v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32;
    }
}

fn noise_layer(bank: &NoiseBank, layer: &NoiseLayer, width: u32, height: u32) -> GreyF {
    let idx = ((layer.pick * bank.len() as f64) as usize).min(bank.len() - 1);
    let src = &bank.images[idx].data;
    let longest = width.max(height) as f64;
    let edge = ((layer.edge * longest / BASE_EXTENT).round() as u32).max(width.max(height));
    let mut img = ops::resize_shortest(src, edge);
    if layer.flip_h {
        imageops::flip_horizontal_in_place(&mut img);
    }
    if layer.flip_v {
        imageops::flip_vertical_in_place(&mut img);
    }
    let img = ops::rotate(&img, layer.rotation);
    ops::crop(&img, width, height, layer.crop)
}

/// Applies `recipe` to a clean clip and its reference images.
pub fn apply_recipe(
    clip: &[RgbImage],
    refs: &[RgbImage],
    bank: &NoiseBank,
    recipe: &DegradeRecipe,
) -> Result<TrainingSample> {
    if clip.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if clip.len() != recipe.noise.len() || refs.len() != recipe.references.len() {
        return Err(Error::InvalidInput {
            op: "apply_recipe",
            reason: format!(
                "recipe covers {} frames and {} references, got {} and {}",
                recipe.noise.len(),
                recipe.references.len(),
                clip.len(),
                refs.len()
            ),
        });
    }
    if recipe.needs_bank() && bank.is_empty() {
        return Err(Error::EmptyNoiseBank);
    }
    let dims = clip[0].dimensions();
    if let Some(i) = clip.iter().position(|f| f.dimensions() != dims) {
        return Err(Error::Frames(format!("clip frame {i} differs in extent from frame 0")));
    }
    let size = recipe.size;

    let mut y: Vec<Rgb32FImage> = clip.iter().map(ops::to_float).collect();
    if let Some(geo) = &recipe.geometry {
        let edge = recipe.scaled_edge(geo.edge);
        for f in &mut y {
            if geo.flip {
                imageops::flip_horizontal_in_place(f);
            }
            let scaled = ops::resize_shortest(f, edge);
            let rotated = ops::rotate(&scaled, geo.rotation);
            *f = ops::crop(&rotated, size, size, geo.crop);
            ops::clamp_unit(f);
        }
    }
    for f in &mut y {
        if let Some(b) = recipe.brightness {
            ops::brightness(f, b);
        }
        if let Some(c) = recipe.contrast {
            ops::contrast(f, c);
        }
    }
    let (y_l, y_ab) = lab_planes(&y);

    let d = y_l.dims();
    let (w, h) = (d.w as u32, d.h as u32);
    let plane = d.h * d.w;
    let mut x = y_l.clone();
    let mut gauss_rng = recipe.gaussian.map(|g| ChaCha8Rng::seed_from_u64(g.seed));
    for (t, layers) in recipe.noise.iter().enumerate() {
        let slice = &x.data()[t * plane..(t + 1) * plane];
        let mut frame = GreyF::from_raw(w, h, slice.to_vec()).expect("plane length");
        if let Some(f) = recipe.blur {
            frame = ops::blur(&frame, f);
        }
        if let Some(c) = recipe.x_contrast {
            ops::contrast(&mut frame, c);
        }
        if !layers.is_empty() {
            let mut sum = vec![0.0f32; plane];
            for layer in layers {
                let n = noise_layer(bank, layer, w, h);
                let k = (layer.sign * layer.amplitude) as f32;
                for (s, v) in sum.iter_mut().zip(n.iter()) {
                    *s += k * v;
                }
            }
            for (p, s) in frame.iter_mut().zip(&sum) {
                *p = (*p + s).clamp(0.0, 1.0);
            }
        }
        if let (Some(g), Some(rng)) = (&recipe.gaussian, gauss_rng.as_mut()) {
            add_gaussian(&mut frame, g, rng);
        }
        if let Some(q) = recipe.jpeg_quality {
            ops::jpeg_grey(&mut frame, q.round() as u32);
        }
        ops::clamp_unit(&mut frame);
        x.data_mut()[t * plane..(t + 1) * plane].copy_from_slice(&frame);
    }

    let mut z_frames = Vec::with_capacity(refs.len());
    for (img, r) in refs.iter().zip(&recipe.references) {
        let mut f = ops::to_float(img);
        if r.flip {
            imageops::flip_horizontal_in_place(&mut f);
        }
        let scaled = ops::resize_shortest(&f, recipe.scaled_edge(r.edge));
        let mut f = ops::crop(&scaled, size, size, r.crop);
        ops::clamp_unit(&mut f);
        if let Some(s) = r.saturation {
            ops::saturation(&mut f, s);
        }
        if let Some(g) = &r.gaussian {
            add_gaussian(&mut f, g, &mut ChaCha8Rng::seed_from_u64(g.seed));
        }
        if let Some(q) = r.jpeg_quality {
            ops::jpeg_rgb(&mut f, q.round() as u32);
        }
        z_frames.push(f);
    }
    let z = if z_frames.is_empty() {
        Tensor5::zeros(Dims5::new(1, 3, 0, d.h, d.w))
    } else {
        let (l, ab) = lab_planes(&z_frames);
        let ld = l.dims();
        Tensor5::from_fn(Dims5::new(1, 3, ld.t, ld.h, ld.w), |i| match i[1] {
            0 => l.at([0, 0, i[2], i[3], i[4]]),
            c => ab.at([0, c - 1, i[2], i[3], i[4]]),
        })
    };
    Ok(TrainingSample { x, y_l, y_ab, z })
}

/// A clean colour video.
#[derive(Clone, Debug)]
pub struct Video {
    pub frames: Vec<RgbImage>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub videos: Vec<Video>,
}

/// Frame `(video, index)` in a dataset.
pub type FrameRef = (usize, usize);

impl Dataset {
    /// Each sub-directory of `dir` (lexicographic order) is one frame sequence.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut subdirs: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::Frames(format!("cannot read directory {}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        let videos = subdirs
            .iter()
            .map(|d| crate::frames::read_sequence(d).map(|frames| Video { frames }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { videos })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn frame(&self, r: FrameRef) -> &RgbImage {
        &self.videos[r.0].frames[r.1]
    }

    /// Splits off every `k`-th video (starting with the last) as a held-out
    /// set; with a single video both halves share it.
    pub fn split_validation(self, k: usize) -> (Dataset, Dataset) {
        if self.videos.len() < 2 {
            return (self.clone(), self);
        }
        let n = self.videos.len();
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (i, v) in self.videos.into_iter().enumerate() {
            if (n - 1 - i) % k.max(2) == 0 {
                val.push(v);
            } else {
                train.push(v);
            }
        }
        (Dataset { videos: train }, Dataset { videos: val })
    }
}

/// Reference frames for the clip starting at `clip.1` in video `clip.0`.
/// The count is uniform on `0..=6`; the first reference comes from within
/// five frames of the clip, the rest from anywhere in the dataset.
pub fn sample_references(dataset: &Dataset, clip: FrameRef, clip_len: usize, rng: &mut impl Rng) -> Vec<FrameRef> {
    let count = rng.random_range(0..=MAX_REFERENCES);
    if count == 0 || dataset.is_empty() {
        return Vec::new();
    }
    let (video, start) = clip;
    let len = dataset.videos[video].frames.len();
    let lo = start.saturating_sub(REFERENCE_WINDOW);
    let hi = (start + clip_len - 1 + REFERENCE_WINDOW).min(len - 1);
    let mut refs = vec![(video, rng.random_range(lo..=hi))];
    let nonempty: Vec<usize> = (0..dataset.len())
        .filter(|&v| !dataset.videos[v].frames.is_empty())
        .collect();
    for _ in 1..count {
        let v = *nonempty.choose(rng).expect("dataset has frames");
        let f = rng.random_range(0..dataset.videos[v].frames.len());
        refs.push((v, f));
    }
    refs
}

/// Reproducible stream of training samples.
pub struct SampleGenerator<'a> {
    pub dataset: &'a Dataset,
    pub bank: &'a NoiseBank,
    pub size: u32,
    pub clip_len: usize,
}

impl SampleGenerator<'_> {
    pub fn sample(&self, seed: u64) -> Result<(TrainingSample, DegradeRecipe)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eligible: Vec<usize> = (0..self.dataset.len())
            .filter(|&v| self.dataset.videos[v].frames.len() >= self.clip_len)
            .collect();
        if self.dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let Some(&video) = eligible.choose(&mut rng) else {
            return Err(Error::VideoTooShort {
                video: 0,
                frames: self.dataset.videos[0].frames.len(),
                required: self.clip_len,
            });
        };
        let start = rng.random_range(0..=self.dataset.videos[video].frames.len() - self.clip_len);
        let refs = sample_references(self.dataset, (video, start), self.clip_len, &mut rng);
        let recipe = DegradeRecipe::draw(rng.random(), self.clip_len, refs.len(), self.size);
        let clip = &self.dataset.videos[video].frames[start..start + self.clip_len];
        let ref_imgs: Vec<RgbImage> = refs.iter().map(|&r| self.dataset.frame(r).clone()).collect();
        let sample = apply_recipe(clip, &ref_imgs, self.bank, &recipe)?;
        Ok((sample, recipe))
    }
}

#[cfg(test)]
mod tests;
