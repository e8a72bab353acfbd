//! Image operations used by the augmentation and deterioration pipeline.
//! Everything works on `f32` buffers with values nominally in `[0, 1]`.

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, Pixel, Rgb, Rgb32FImage, RgbImage};

pub type GreyF = ImageBuffer<Luma<f32>, Vec<f32>>;
pub type Buffer<P> = ImageBuffer<P, Vec<f32>>;

pub fn to_float(img: &RgbImage) -> Rgb32FImage {
    Rgb32FImage::from_fn(img.width(), img.height(), |x, y| {
        Rgb(img.get_pixel(x, y).0.map(|v| v as f32 / 255.0))
    })
}

pub fn to_u8(img: &Rgb32FImage) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        Rgb(img.get_pixel(x, y).0.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

pub fn clamp_unit<P: Pixel<Subpixel = f32>>(img: &mut Buffer<P>) {
    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Bicubic resize so that the shorter side becomes `edge` pixels.
pub fn resize_shortest<P>(img: &Buffer<P>, edge: u32) -> Buffer<P>
where
    P: Pixel<Subpixel = f32> + 'static,
{
    let (w, h) = img.dimensions();
    let short = w.min(h) as f64;
    let scale = edge as f64 / short;
    let nw = ((w as f64 * scale).round() as u32).max(edge);
    let nh = ((h as f64 * scale).round() as u32).max(edge);
    if (nw, nh) == (w, h) {
        return img.clone();
    }
    imageops::resize(img, nw, nh, FilterType::CatmullRom)
}

/// Rotation about the image centre with bilinear sampling; samples falling
/// outside are clamped to the nearest edge pixel.
pub fn rotate<P: Pixel<Subpixel = f32>>(img: &Buffer<P>, degrees: f64) -> Buffer<P> {
    if degrees == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let channels = P::CHANNEL_COUNT as usize;
    let src = img.as_raw();
    let fetch = |x: i64, y: i64, c: usize| {
        let x = x.clamp(0, w as i64 - 1) as usize;
        let y = y.clamp(0, h as i64 - 1) as usize;
        src[(y * w as usize + x) * channels + c] as f64
    };
    let mut out = Buffer::<P>::new(w, h);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let sx = cos * dx + sin * dy + cx;
        let sy = -sin * dx + cos * dy + cy;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        for (c, v) in px.channels_mut().iter_mut().enumerate() {
            let top = fetch(x0, y0, c) * (1.0 - fx) + fetch(x0 + 1, y0, c) * fx;
            let bottom = fetch(x0, y0 + 1, c) * (1.0 - fx) + fetch(x0 + 1, y0 + 1, c) * fx;
            *v = (top * (1.0 - fy) + bottom * fy) as f32;
        }
    }
    out
}

/// Crops `w x h` at a relative offset: `frac = (0, 0)` is the top-left
/// placement and values approaching 1 the bottom-right one.
pub fn crop<P>(img: &Buffer<P>, w: u32, h: u32, frac: [f64; 2]) -> Buffer<P>
where
    P: Pixel<Subpixel = f32> + 'static,
{
    let (iw, ih) = img.dimensions();
    assert!(iw >= w && ih >= h, "crop {w}x{h} larger than image {iw}x{ih}");
    let pick = |slack: u32, f: f64| ((f * (slack + 1) as f64) as u32).min(slack);
    let (x, y) = (pick(iw - w, frac[0]), pick(ih - h, frac[1]));
    imageops::crop_imm(img, x, y, w, h).to_image()
}

/// Bicubic down-sampling by `factor` followed by bicubic up-sampling back to
/// the original extent.
pub fn blur(img: &GreyF, factor: f64) -> GreyF {
    let (w, h) = img.dimensions();
    let dw = ((w as f64 / factor).round() as u32).max(1);
    let dh = ((h as f64 / factor).round() as u32).max(1);
    let small = imageops::resize(img, dw, dh, FilterType::CatmullRom);
    let mut out = imageops::resize(&small, w, h, FilterType::CatmullRom);
    clamp_unit(&mut out);
    out
}

/// `(v - 0.5) * c + 0.5`, clamped.
pub fn contrast<P: Pixel<Subpixel = f32>>(img: &mut Buffer<P>, c: f64) {
    for v in img.iter_mut() {
        *v = ((*v as f64 - 0.5) * c + 0.5).clamp(0.0, 1.0) as f32;
    }
}

pub fn brightness<P: Pixel<Subpixel = f32>>(img: &mut Buffer<P>, factor: f64) {
    for v in img.iter_mut() {
        *v = (*v as f64 * factor).clamp(0.0, 1.0) as f32;
    }
}

/// Blends each pixel toward its Rec. 601 luma; `s = 1` is the identity.
pub fn saturation(img: &mut Rgb32FImage, s: f64) {
    for px in img.pixels_mut() {
        let [r, g, b] = px.0.map(|v| v as f64);
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        px.0 = [r, g, b].map(|v| (y + s * (v - y)).clamp(0.0, 1.0) as f32);
    }
}

const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14,
    17, 22, 29, 51, 87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49,
    64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA_TABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47,
    66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantTable {
    Luma,
    Chroma,
}

/// IJG quality scaling of a base quantisation table.
pub fn quant_table(table: QuantTable, quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let base = match table {
        QuantTable::Luma => &LUMA_TABLE,
        QuantTable::Chroma => &CHROMA_TABLE,
    };
    base.map(|b| ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64)
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    m
}

/// One quantise/dequantise round of an 8x8 block DCT over a plane with
/// values in `[0, 1]`. Partial border blocks are padded by edge replication.
pub fn jpeg_plane(plane: &mut [f32], width: usize, height: usize, table: &[f64; 64]) {
    let basis = dct_basis();
    let mut block = [[0.0f64; 8]; 8];
    let mut tmp = [[0.0f64; 8]; 8];
    for by in (0..height).step_by(8) {
        for bx in (0..width).step_by(8) {
            for (y, row) in block.iter_mut().enumerate() {
                let sy = (by + y).min(height - 1);
                for (x, v) in row.iter_mut().enumerate() {
                    let sx = (bx + x).min(width - 1);
                    *v = plane[sy * width + sx] as f64 * 255.0 - 128.0;
                }
            }
            // Forward: C = B X B^T, quantise, inverse: X = B^T C B.
            for u in 0..8 {
                for x in 0..8 {
                    tmp[u][x] = (0..8).map(|y| basis[u][y] * block[y][x]).sum();
                }
            }
            for u in 0..8 {
                for v in 0..8 {
                    let c: f64 = (0..8).map(|x| tmp[u][x] * basis[v][x]).sum();
                    let q = table[u * 8 + v];
                    block[u][v] = (c / q).round() * q;
                }
            }
            for y in 0..8 {
                for v in 0..8 {
                    tmp[y][v] = (0..8).map(|u| basis[u][y] * block[u][v]).sum();
                }
            }
            for y in 0..8.min(height - by) {
                for x in 0..8.min(width - bx) {
                    let s: f64 = (0..8).map(|v| tmp[y][v] * basis[v][x]).sum();
                    plane[(by + y) * width + bx + x] = ((s + 128.0) / 255.0).clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
}

pub fn jpeg_grey(img: &mut GreyF, quality: u32) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let table = quant_table(QuantTable::Luma, quality);
    jpeg_plane(img, w, h, &table);
}

/// Colour JPEG round trip in full-resolution YCbCr.
pub fn jpeg_rgb(img: &mut Rgb32FImage, quality: u32) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = w * h;
    let mut planes = vec![0.0f32; 3 * n];
    for (i, px) in img.pixels().enumerate() {
        let [r, g, b] = px.0.map(|v| v as f64);
        planes[i] = (0.299 * r + 0.587 * g + 0.114 * b) as f32;
        planes[n + i] = (0.5 - 0.168_736 * r - 0.331_264 * g + 0.5 * b) as f32;
        planes[2 * n + i] = (0.5 + 0.5 * r - 0.418_688 * g - 0.081_312 * b) as f32;
    }
    let luma = quant_table(QuantTable::Luma, quality);
    let chroma = quant_table(QuantTable::Chroma, quality);
    let (y, rest) = planes.split_at_mut(n);
    let (cb, cr) = rest.split_at_mut(n);
    jpeg_plane(y, w, h, &luma);
    jpeg_plane(cb, w, h, &chroma);
    jpeg_plane(cr, w, h, &chroma);
    for (i, px) in img.pixels_mut().enumerate() {
        let (y, cb, cr) = (y[i] as f64, cb[i] as f64 - 0.5, cr[i] as f64 - 0.5);
        px.0 = [
            y + 1.402 * cr,
            y - 0.344_136 * cb - 0.714_136 * cr,
            y + 1.772 * cb,
        ]
        .map(|v| v.clamp(0.0, 1.0) as f32);
    }
}

/// Variance of the 4-neighbour Laplacian over interior pixels.
pub fn laplacian_variance(img: &GreyF) -> f64 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let p = |x: usize, y: usize| img.as_raw()[y * w + x] as f64;
    let mut vals = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            vals.push(p(x - 1, y) + p(x + 1, y) + p(x, y - 1) + p(x, y + 1) - 4.0 * p(x, y));
        }
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
}
