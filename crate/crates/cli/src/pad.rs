use image::{imageops, RgbImage};
use serde::Serialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Padding {
    pub top: u32,
    pub bottom: u32,
    pub left: u32,
    pub right: u32,
}

impl Padding {
    /// Smallest split padding that brings `width x height` to multiples of `m`.
    pub fn to_multiple(width: u32, height: u32, m: u32) -> Self {
        let extra = |n: u32| (m - n % m) % m;
        let (ph, pw) = (extra(height), extra(width));
        Self {
            top: ph / 2,
            bottom: ph - ph / 2,
            left: pw / 2,
            right: pw - pw / 2,
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

/// Mirror index without repeating the edge sample.
fn reflect(i: i64, n: i64) -> u32 {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as u32
}

pub fn reflect_pad(img: &RgbImage, p: Padding) -> RgbImage {
    if p.is_zero() {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w + p.left + p.right, h + p.top + p.bottom, |x, y| {
        let sx = reflect(x as i64 - p.left as i64, w as i64);
        let sy = reflect(y as i64 - p.top as i64, h as i64);
        *img.get_pixel(sx, sy)
    })
}

pub fn crop<P>(img: &image::ImageBuffer<P, Vec<P::Subpixel>>, p: Padding, width: u32, height: u32) -> image::ImageBuffer<P, Vec<P::Subpixel>>
where
    P: image::Pixel + 'static,
{
    imageops::crop_imm(img, p.left, p.top, width, height).to_image()
}
