//! sRGB <-> CIE Lab (D65) in the normalised form the networks consume.
//!
//! `L` is scaled to `[0, 1]` by `L* / 100`; `a*` and `b*` are mapped by
//! `(v + 127.5) / 255`, so neutral grey has chroma exactly `(0.5, 0.5)`.

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Dims5, Tensor5};

/// D65 reference white in XYZ.
pub const WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

/// Offset added to `a*` and `b*` before dividing by 255.
pub const CHROMA_OFFSET: f64 = 127.5;

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn mat(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

/// CIE `(L*, a*, b*)` of an sRGB colour with channels in `[0, 1]`.
pub fn srgb_to_cielab(rgb: [f64; 3]) -> [f64; 3] {
    let xyz = mat(&RGB_TO_XYZ, rgb.map(srgb_to_linear));
    let f = |t: f64| {
        if t > EPSILON {
            t.cbrt()
        } else {
            (KAPPA * t + 16.0) / 116.0
        }
    };
    let [fx, fy, fz] = [0, 1, 2].map(|i| f(xyz[i] / WHITE[i]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// sRGB in `[0, 1]` of a CIE Lab colour; out-of-gamut channels are clamped.
pub fn cielab_to_srgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let inv = |f: f64| {
        let cube = f * f * f;
        if cube > EPSILON {
            cube
        } else {
            (116.0 * f - 16.0) / KAPPA
        }
    };
    let xyz = [inv(fx) * WHITE[0], inv(fy) * WHITE[1], inv(fz) * WHITE[2]];
    mat(&XYZ_TO_RGB, xyz).map(|v| linear_to_srgb(v.clamp(0.0, 1.0)).clamp(0.0, 1.0))
}

/// Normalised `(L, a, b)` in `[0, 1]` from 8-bit RGB.
pub fn rgb_to_lab(rgb: [u8; 3]) -> [f32; 3] {
    let lab = srgb_to_cielab(rgb.map(|v| v as f64 / 255.0));
    normalise(lab)
}

/// 8-bit RGB from normalised `(L, a, b)`.
pub fn lab_to_rgb(lab: [f32; 3]) -> [u8; 3] {
    let rgb = cielab_to_srgb(denormalise(lab));
    rgb.map(|v| (v * 255.0).round() as u8)
}

pub fn normalise(lab: [f64; 3]) -> [f32; 3] {
    [
        (lab[0] / 100.0) as f32,
        ((lab[1] + CHROMA_OFFSET) / 255.0) as f32,
        ((lab[2] + CHROMA_OFFSET) / 255.0) as f32,
    ]
}

pub fn denormalise(lab: [f32; 3]) -> [f64; 3] {
    [
        lab[0] as f64 * 100.0,
        lab[1] as f64 * 255.0 - CHROMA_OFFSET,
        lab[2] as f64 * 255.0 - CHROMA_OFFSET,
    ]
}

/// Per-pixel normalised Lab planes of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LabFrame {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f32>,
    /// `a` plane followed by the `b` plane.
    pub ab: Vec<f32>,
}

impl LabFrame {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (width, height) = (img.width() as usize, img.height() as usize);
        let n = width * height;
        let mut l = Vec::with_capacity(n);
        let mut ab = vec![0.0; 2 * n];
        for (i, px) in img.pixels().enumerate() {
            let [lv, a, b] = rgb_to_lab(px.0);
            l.push(lv);
            ab[i] = a;
            ab[n + i] = b;
        }
        Self { width, height, l, ab }
    }

    pub fn to_rgb(&self) -> RgbImage {
        let n = self.width * self.height;
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = y as usize * self.width + x as usize;
            Rgb(lab_to_rgb([self.l[i], self.ab[i], self.ab[n + i]]))
        })
    }
}

fn check_frames(frames: &[RgbImage]) -> Result<(u32, u32)> {
    let first = frames.first().ok_or_else(|| Error::Frames("no frames".into()))?;
    let (w, h) = first.dimensions();
    if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dimensions() != (w, h)) {
        return Err(Error::Frames(format!(
            "frame {i} is {}x{}, expected {w}x{h}",
            f.width(),
            f.height()
        )));
    }
    Ok((w, h))
}

/// Splits frames into luminance `(1,1,T,H,W)` and chrominance `(1,2,T,H,W)`.
pub fn frames_to_lab(frames: &[RgbImage]) -> Result<(Tensor5, Tensor5)> {
    let (w, h) = check_frames(frames)?;
    let (w, h, t) = (w as usize, h as usize, frames.len());
    let labs: Vec<LabFrame> = frames.iter().map(LabFrame::from_rgb).collect();
    let n = w * h;
    let luma = Tensor5::from_fn(Dims5::new(1, 1, t, h, w), |i| labs[i[2]].l[i[3] * w + i[4]]);
    let chroma = Tensor5::from_fn(Dims5::new(1, 2, t, h, w), |i| {
        labs[i[2]].ab[i[1] * n + i[3] * w + i[4]]
    });
    Ok((luma, chroma))
}

/// Stacks reference images as `(1,3,N,H,W)` normalised Lab.
pub fn images_to_lab(images: &[RgbImage]) -> Result<Tensor5> {
    let (w, h) = check_frames(images)?;
    let (w, h) = (w as usize, h as usize);
    let labs: Vec<LabFrame> = images.iter().map(LabFrame::from_rgb).collect();
    let n = w * h;
    Ok(Tensor5::from_fn(Dims5::new(1, 3, images.len(), h, w), |i| {
        let f = &labs[i[2]];
        let p = i[3] * w + i[4];
        match i[1] {
            0 => f.l[p],
            c => f.ab[(c - 1) * n + p],
        }
    }))
}

/// Greyscale frames from a `(1,1,T,H,W)` luminance tensor, L mapped linearly
/// to 8 bits.
pub fn luma_to_grey(luma: &Tensor5) -> Vec<image::GrayImage> {
    let d = luma.dims();
    (0..d.t)
        .map(|t| {
            image::GrayImage::from_fn(d.w as u32, d.h as u32, |x, y| {
                let v = luma.at([0, 0, t, y as usize, x as usize]);
                image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
            })
        })
        .collect()
}

/// RGB frames from luminance `(1,1,T,H,W)` and chrominance `(1,2,T,H,W)`.
pub fn compose_output(luma: &Tensor5, chroma: &Tensor5) -> Result<Vec<RgbImage>> {
    let (ld, cd) = (luma.dims(), chroma.dims());
    if ld.b != 1 || ld.c != 1 || cd != Dims5::new(1, 2, ld.t, ld.h, ld.w) {
        return Err(Error::ShapeMismatch {
            op: "compose_output",
            left: ld,
            right: cd,
        });
    }
    Ok((0..ld.t)
        .map(|t| {
            RgbImage::from_fn(ld.w as u32, ld.h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                Rgb(lab_to_rgb([
                    luma.at([0, 0, t, y, x]),
                    chroma.at([0, 0, t, y, x]),
                    chroma.at([0, 1, t, y, x]),
                ]))
            })
        })
        .collect())
}

/// Relative luminance `Y` of an sRGB colour in `[0, 1]`.
pub fn relative_luminance(rgb: [f64; 3]) -> f64 {
    mat(&RGB_TO_XYZ, rgb.map(srgb_to_linear))[1]
}
