//! Procedural film-noise generators and the noise bank.
//!
//! Generators return signed maps in `[-1, 1]`. The bank stores deviation maps
//! in `[-0.5, 0.5]`, which are added to greyscale frames (mid-grey in a loaded
//! PNG means no change).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::GreyF;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Loaded,
    Fractal,
    Grain,
    Scratch,
    Dust,
}

impl NoiseKind {
    pub const GENERATED: [NoiseKind; 4] = [Self::Fractal, Self::Grain, Self::Scratch, Self::Dust];
}

pub const MIN_NOISE_EXTENT: u32 = 64;

/// Signed noise map of the given kind in `[-1, 1]`; deterministic per seed.
pub fn generate_noise(kind: NoiseKind, width: u32, height: u32, seed: u64) -> Result<GreyF> {
    if width < MIN_NOISE_EXTENT || height < MIN_NOISE_EXTENT {
        return Err(Error::InvalidInput {
            op: "generate_noise",
            reason: format!("{width}x{height} is below the {MIN_NOISE_EXTENT}x{MIN_NOISE_EXTENT} minimum"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = match kind {
        NoiseKind::Fractal => fractal(width, height, &mut rng),
        NoiseKind::Grain => grain(width, height, &mut rng),
        NoiseKind::Scratch => scratch(width, height, &mut rng),
        NoiseKind::Dust => dust(width, height, &mut rng),
        NoiseKind::Loaded => {
            return Err(Error::InvalidInput {
                op: "generate_noise",
                reason: "loaded noise cannot be generated".into(),
            })
        }
    };
    Ok(img)
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Four octaves of value noise with persistence 0.5 through a drawn
/// contrast curve.
fn fractal(width: u32, height: u32, rng: &mut impl Rng) -> GreyF {
    const OCTAVES: usize = 4;
    let base = (width.max(height) as f64 / 4.0).max(4.0);
    let lattices: Vec<(f64, usize, Vec<f64>)> = (0..OCTAVES)
        .map(|o| {
            let period = base / (1 << o) as f64;
            let n = (width.max(height) as f64 / period).ceil() as usize + 2;
            let values = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            (period, n, values)
        })
        .collect();
    let gain: f64 = rng.random_range(1.0..2.5);
    let norm: f64 = (0..OCTAVES).map(|o| 0.5f64.powi(o as i32)).sum();
    GreyF::from_fn(width, height, |x, y| {
        let mut v = 0.0;
        for (o, (period, n, values)) in lattices.iter().enumerate() {
            let (fx, fy) = (x as f64 / period, y as f64 / period);
            let (ix, iy) = (fx as usize, fy as usize);
            let (tx, ty) = (smoothstep(fx - ix as f64), smoothstep(fy - iy as f64));
            let at = |i: usize, j: usize| values[j * n + i];
            let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
            let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
            v += 0.5f64.powi(o as i32) * (top * (1.0 - ty) + bottom * ty);
        }
        image::Luma([((v / norm) * gain).tanh() as f32])
    })
}

/// Independent zero-mean Gaussian grain, clipped symmetrically.
fn grain(width: u32, height: u32, rng: &mut impl Rng) -> GreyF {
    let sigma = rng.random_range(0.15..0.4);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    GreyF::from_fn(width, height, |_, _| {
        image::Luma([(normal.sample(rng) as f32).clamp(-1.0, 1.0)])
    })
}

/// A few thin, almost vertical streaks.
fn scratch(width: u32, height: u32, rng: &mut impl Rng) -> GreyF {
    let mut img = GreyF::new(width, height);
    let count = rng.random_range(1..=3);
    for _ in 0..count {
        let x0 = rng.random_range(0.0..width as f64);
        let slope = rng.random_range(-0.01..0.01);
        let half = rng.random_range(0.4..1.0);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let strength = rng.random_range(0.5..1.0);
        let y0 = rng.random_range(0..height / 2);
        let y1 = rng.random_range(height / 2..=height);
        for y in y0..y1 {
            let cx = x0 + slope * y as f64;
            let flicker = 0.8 + 0.2 * rng.random::<f64>();
            let lo = (cx - half).floor().max(0.0) as u32;
            let hi = ((cx + half).ceil() as u32).min(width - 1);
            for x in lo..=hi {
                let d = ((x as f64 - cx).abs() / (half + 0.5)).min(1.0);
                let v = sign * strength * flicker * (1.0 - d);
                let p = &mut img.get_pixel_mut(x, y).0[0];
                *p = (*p + v as f32).clamp(-1.0, 1.0);
            }
        }
    }
    img
}

/// Sparse soft-edged blobs.
fn dust(width: u32, height: u32, rng: &mut impl Rng) -> GreyF {
    let mut img = GreyF::new(width, height);
    let area = (width * height) as f64 / (256.0 * 256.0);
    let count = ((rng.random_range(5.0..30.0) * area).round() as usize).max(1);
    for _ in 0..count {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let r = rng.random_range(0.8..4.0);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let x0 = (cx - r).floor().max(0.0) as u32;
        let y0 = (cy - r).floor().max(0.0) as u32;
        let x1 = ((cx + r).ceil() as u32).min(width - 1);
        let y1 = ((cy + r).ceil() as u32).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() / r;
                if d < 1.0 {
                    let p = &mut img.get_pixel_mut(x, y).0[0];
                    *p = (*p + (sign * (1.0 - d * d)) as f32).clamp(-1.0, 1.0);
                }
            }
        }
    }
    img
}

#[derive(Clone, Debug)]
pub struct NoiseImage {
    pub kind: NoiseKind,
    /// Deviations in `[-0.5, 0.5]`.
    pub data: GreyF,
}

#[derive(Clone, Debug, Default)]
pub struct NoiseBank {
    pub images: Vec<NoiseImage>,
}

impl NoiseBank {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn push_generated(&mut self, kind: NoiseKind, data: &GreyF) {
        let mut data = data.clone();
        for v in data.iter_mut() {
            *v *= 0.5;
        }
        self.images.push(NoiseImage { kind, data });
    }

    /// `per_kind` generated images of every procedural kind at `extent`
    /// square, seeded from `seed`.
    pub fn generated(per_kind: usize, extent: u32, seed: u64) -> Result<Self> {
        let mut bank = Self::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..per_kind {
            for kind in NoiseKind::GENERATED {
                let img = generate_noise(kind, extent, extent, rng.random())?;
                bank.push_generated(kind, &img);
            }
        }
        Ok(bank)
    }

    /// Loads every PNG in `dir` (lexicographic order) as greyscale, mapping
    /// `v / 255 - 0.5`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut bank = Self::default();
        for path in crate::frames::list_pngs(dir)? {
            let img = image::open(&path)
                .map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?
                .into_luma8();
            let data = GreyF::from_fn(img.width(), img.height(), |x, y| {
                image::Luma([img.get_pixel(x, y).0[0] as f32 / 255.0 - 0.5])
            });
            bank.images.push(NoiseImage {
                kind: NoiseKind::Loaded,
                data,
            });
        }
        Ok(bank)
    }

    /// Writes the bank as PNGs loadable by [`NoiseBank::load_dir`].
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, img) in self.images.iter().enumerate() {
            let out = image::GrayImage::from_fn(img.data.width(), img.data.height(), |x, y| {
                let v = img.data.get_pixel(x, y).0[0] + 0.5;
                image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
            });
            let path = dir.join(format!("noise_{i:05}.png"));
            out.save(&path).map_err(|source| Error::Image { path, source })?;
        }
        Ok(())
    }
}
