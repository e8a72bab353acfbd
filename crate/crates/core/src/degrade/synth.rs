//! Procedural colour videos: a drifting two-colour gradient with textured
//! shapes moving across it. Colours stay fixed within a video, so any frame
//! is a usable colour reference for the others.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Video};

struct Shape {
    color: [f64; 3],
    pos: [f64; 2],
    vel: [f64; 2],
    radius: f64,
    round: bool,
    stripes: f64,
}

fn vivid(rng: &mut impl Rng) -> [f64; 3] {
    let hue: f64 = rng.random_range(0.0..6.0);
    let (sat, val) = (rng.random_range(0.5..1.0), rng.random_range(0.35..0.95));
    let c = val * sat;
    let x = c * (1.0 - (hue % 2.0 - 1.0).abs());
    let (r, g, b) = match hue as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [r + m, g + m, b + m]
}

pub fn synthetic_video(seed: u64, frames: usize, width: u32, height: u32) -> Vec<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let bg = [vivid(&mut rng), vivid(&mut rng)];
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let spin: f64 = rng.random_range(-0.01..0.01);
    let count = rng.random_range(3..=6);
    let mut shapes: Vec<Shape> = (0..count)
        .map(|_| {
            let radius = rng.random_range(0.08..0.22) * w.min(h);
            Shape {
                color: vivid(&mut rng),
                pos: [rng.random_range(0.0..w), rng.random_range(0.0..h)],
                vel: [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
                radius,
                round: rng.random_bool(0.5),
                stripes: rng.random_range(0.0..0.6),
            }
        })
        .collect();

    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let a = angle + spin * t as f64;
        let (sin, cos) = a.sin_cos();
        let img = RgbImage::from_fn(width, height, |x, y| {
            let (fx, fy) = (x as f64 / w - 0.5, y as f64 / h - 0.5);
            let s = (fx * cos + fy * sin + 0.5).clamp(0.0, 1.0);
            let mut c = [0, 1, 2].map(|i| bg[0][i] * (1.0 - s) + bg[1][i] * s);
            for sh in &shapes {
                let (dx, dy) = (x as f64 - sh.pos[0], y as f64 - sh.pos[1]);
                let inside = if sh.round {
                    dx * dx + dy * dy <= sh.radius * sh.radius
                } else {
                    dx.abs() <= sh.radius && dy.abs() <= sh.radius * 0.7
                };
                if inside {
                    let stripe = 1.0 - sh.stripes * 0.5 * (1.0 + ((dx + dy) * 0.6).sin());
                    c = sh.color.map(|v| v * stripe);
                }
            }
            Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        });
        out.push(img);
        for sh in &mut shapes {
            for (i, extent) in [w, h].into_iter().enumerate() {
                sh.pos[i] += sh.vel[i];
                if sh.pos[i] < 0.0 || sh.pos[i] > extent {
                    sh.vel[i] = -sh.vel[i];
                    sh.pos[i] = sh.pos[i].clamp(0.0, extent);
                }
            }
        }
    }
    out
}

/// `videos` synthetic videos with consecutive seeds starting at `seed`.
pub fn synthetic_dataset(seed: u64, videos: usize, frames: usize, width: u32, height: u32) -> Dataset {
    Dataset {
        videos: (0..videos)
            .map(|i| Video {
                frames: synthetic_video(seed.wrapping_add(i as u64), frames, width, height),
            })
            .collect(),
    }
}
