//! 3-D convolution via per-frame im2col and GEMM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{check_axis, gemm, Axis, Dims5, MatRef, Tensor5};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Zero,
    /// Out-of-range taps read the nearest edge sample.
    Replicate,
}

/// Geometry of one convolution layer. Kernels are odd along every axis and
/// padded by `k / 2`, so stride 1 preserves extents and stride 2 yields
/// `ceil(n / 2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(k_t, k_h, k_w)`
    pub kernel: [usize; 3],
    /// `(s_t, s_h, s_w)`
    pub stride: [usize; 3],
    pub padding: Padding,
}

impl ConvSpec {
    /// `1x3x3` kernel, optionally with a `1x2x2` stride.
    pub fn spatial(in_channels: usize, out_channels: usize, downsample: bool) -> Self {
        let s = if downsample { 2 } else { 1 };
        Self {
            in_channels,
            out_channels,
            kernel: [1, 3, 3],
            stride: [1, s, s],
            padding: Padding::Zero,
        }
    }

    /// `3x3x3` kernel, optionally with a `1x2x2` stride.
    pub fn temporal(in_channels: usize, out_channels: usize, downsample: bool) -> Self {
        Self {
            kernel: [3, 3, 3],
            ..Self::spatial(in_channels, out_channels, downsample)
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: [1, 1, 1],
            stride: [1, 1, 1],
            padding: Padding::Zero,
        }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn weight_dims(&self) -> Dims5 {
        let [kt, kh, kw] = self.kernel;
        Dims5::new(self.out_channels, self.in_channels, kt, kh, kw)
    }

    pub fn bias_dims(&self) -> Dims5 {
        Dims5::new(1, self.out_channels, 1, 1, 1)
    }

    pub fn validate(&self) -> Result<()> {
        let ok_kernel = self.kernel.iter().all(|&k| k % 2 == 1);
        let ok_stride = self.stride.iter().all(|&s| s >= 1) && self.stride[0] == 1;
        if !ok_kernel || !ok_stride || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidInput {
                op: "conv3d",
                reason: format!("unsupported conv geometry {self:?}"),
            });
        }
        Ok(())
    }

    pub fn output_dims(&self, input: Dims5) -> Dims5 {
        let out = |n: usize, s: usize| n.div_ceil(s);
        Dims5::new(
            input.b,
            self.out_channels,
            out(input.t, self.stride[0]),
            out(input.h, self.stride[1]),
            out(input.w, self.stride[2]),
        )
    }

    fn pad(&self) -> [usize; 3] {
        [self.kernel[0] / 2, self.kernel[1] / 2, self.kernel[2] / 2]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1]
    }
}

pub(crate) fn check_conv_shapes(x: Dims5, w: Dims5, b: Dims5, spec: &ConvSpec) -> Result<()> {
    spec.validate()?;
    check_axis("conv3d", Axis::Channel, spec.in_channels, x.c)?;
    let expected = spec.weight_dims();
    for axis in Axis::ALL {
        check_axis("conv3d weights", axis, expected.get(axis), w.get(axis))?;
    }
    check_axis("conv3d bias", Axis::Channel, spec.out_channels, b.numel())?;
    if x.numel() == 0 {
        return Err(Error::InvalidInput {
            op: "conv3d",
            reason: format!("empty input {x}"),
        });
    }
    Ok(())
}

/// Resolves a padded tap coordinate, `None` for zero padding hits.
#[inline]
fn tap(coord: isize, len: usize, padding: Padding) -> Option<usize> {
    if coord >= 0 && (coord as usize) < len {
        Some(coord as usize)
    } else {
        match padding {
            Padding::Zero => None,
            Padding::Replicate => Some(coord.clamp(0, len as isize - 1) as usize),
        }
    }
}

/// Fills `cols` (`patch_len x Ho*Wo`) with the receptive fields of output
/// frame `to` of batch element `b`.
fn im2col(x: &Tensor5, spec: &ConvSpec, out: Dims5, b: usize, to: usize, cols: &mut [f32]) {
    let d = x.dims();
    let [kt, kh, kw] = spec.kernel;
    let [st, sh, sw] = spec.stride;
    let [pt, ph, pw] = spec.pad();
    let plane = out.h * out.w;
    let data = x.data();
    let mut row = 0;
    for ci in 0..d.c {
        for dt in 0..kt {
            let ti = tap((to * st + dt) as isize - pt as isize, d.t, spec.padding);
            for dh in 0..kh {
                for dw in 0..kw {
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    row += 1;
                    let Some(ti) = ti else {
                        dst.fill(0.0);
                        continue;
                    };
                    let frame = ((b * d.c + ci) * d.t + ti) * d.h * d.w;
                    for ho in 0..out.h {
                        let line = &mut dst[ho * out.w..(ho + 1) * out.w];
                        let Some(hi) = tap((ho * sh + dh) as isize - ph as isize, d.h, spec.padding)
                        else {
                            line.fill(0.0);
                            continue;
                        };
                        let src = &data[frame + hi * d.w..frame + (hi + 1) * d.w];
                        for (wo, v) in line.iter_mut().enumerate() {
                            *v = match tap((wo * sw + dw) as isize - pw as isize, d.w, spec.padding) {
                                Some(wi) => src[wi],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into `dx`, the adjoint of [`im2col`].
fn col2im(dx: &mut [f32], d: Dims5, spec: &ConvSpec, out: Dims5, b: usize, to: usize, cols: &[f32]) {
    let [kt, kh, kw] = spec.kernel;
    let [st, sh, sw] = spec.stride;
    let [pt, ph, pw] = spec.pad();
    let plane = out.h * out.w;
    let mut row = 0;
    for ci in 0..d.c {
        for dt in 0..kt {
            let ti = tap((to * st + dt) as isize - pt as isize, d.t, spec.padding);
            for dh in 0..kh {
                for dw in 0..kw {
                    let src = &cols[row * plane..(row + 1) * plane];
                    row += 1;
                    let Some(ti) = ti else { continue };
                    let frame = ((b * d.c + ci) * d.t + ti) * d.h * d.w;
                    for ho in 0..out.h {
                        let Some(hi) = tap((ho * sh + dh) as isize - ph as isize, d.h, spec.padding)
                        else {
                            continue;
                        };
                        let line = &src[ho * out.w..(ho + 1) * out.w];
                        let dst = &mut dx[frame + hi * d.w..frame + (hi + 1) * d.w];
                        for (wo, v) in line.iter().enumerate() {
                            if let Some(wi) =
                                tap((wo * sw + dw) as isize - pw as isize, d.w, spec.padding)
                            {
                                dst[wi] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv3d_forward(x: &Tensor5, w: &Tensor5, bias: &Tensor5, spec: &ConvSpec) -> Tensor5 {
    let out = spec.output_dims(x.dims());
    let mut y = vec![0.0f32; out.numel()];
    let cout = spec.out_channels;
    let weights = MatRef::row_major(w.data(), cout, spec.patch_len());

    if spec.is_pointwise() {
        let vol = out.volume();
        for b in 0..out.b {
            let xb = &x.data()[b * spec.in_channels * vol..(b + 1) * spec.in_channels * vol];
            let yb = &mut y[b * cout * vol..(b + 1) * cout * vol];
            gemm(1.0, weights, MatRef::row_major(xb, spec.in_channels, vol), 0.0, yb, vol, 1);
        }
    } else {
        let plane = out.h * out.w;
        let mut cols = vec![0.0f32; spec.patch_len() * plane];
        for b in 0..out.b {
            for to in 0..out.t {
                im2col(x, spec, out, b, to, &mut cols);
                let base = b * cout * out.volume() + to * plane;
                gemm(
                    1.0,
                    weights,
                    MatRef::row_major(&cols, spec.patch_len(), plane),
                    0.0,
                    &mut y[base..],
                    out.volume(),
                    1,
                );
            }
        }
    }

    let vol = out.volume();
    for (chunk_idx, chunk) in y.chunks_mut(vol).enumerate() {
        let bv = bias.data()[chunk_idx % cout];
        if bv != 0.0 {
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    Tensor5::new(out, y).expect("output sized from dims")
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f32>>,
    pub dw: Option<Vec<f32>>,
    pub db: Option<Vec<f32>>,
}

pub(crate) fn conv3d_backward(
    x: &Tensor5,
    w: &Tensor5,
    dy: &[f32],
    spec: &ConvSpec,
    need: [bool; 3],
) -> ConvGrads {
    let d = x.dims();
    let out = spec.output_dims(d);
    let cout = spec.out_channels;
    let k = spec.patch_len();
    let vol = out.volume();
    let weights = MatRef::row_major(w.data(), cout, k);

    let db = need[2].then(|| {
        let mut db = vec![0.0f32; cout];
        for (i, chunk) in dy.chunks(vol).enumerate() {
            db[i % cout] += chunk.iter().sum::<f32>();
        }
        db
    });

    let mut dx = need[0].then(|| vec![0.0f32; d.numel()]);
    let mut dw = need[1].then(|| vec![0.0f32; w.numel()]);
    if !need[0] && !need[1] {
        return ConvGrads { dx, dw, db };
    }

    if spec.is_pointwise() {
        let cin = spec.in_channels;
        for b in 0..out.b {
            let dyb = MatRef::row_major(&dy[b * cout * vol..(b + 1) * cout * vol], cout, vol);
            if let Some(dw) = dw.as_mut() {
                let xb = MatRef::row_major(&x.data()[b * cin * vol..(b + 1) * cin * vol], cin, vol);
                gemm(1.0, dyb, xb.t(), 1.0, dw, cin, 1);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(1.0, weights.t(), dyb, 0.0, &mut dx[b * cin * vol..], vol, 1);
            }
        }
    } else {
        let plane = out.h * out.w;
        let mut cols = vec![0.0f32; k * plane];
        let mut dcols = vec![0.0f32; k * plane];
        for b in 0..out.b {
            for to in 0..out.t {
                let base = b * cout * vol + to * plane;
                let dyb = MatRef::new(&dy[base..], cout, plane, vol, 1);
                if let Some(dw) = dw.as_mut() {
                    im2col(x, spec, out, b, to, &mut cols);
                    gemm(1.0, dyb, MatRef::row_major(&cols, k, plane).t(), 1.0, dw, k, 1);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(1.0, weights.t(), dyb, 0.0, &mut dcols, plane, 1);
                    col2im(dx, d, spec, out, b, to, &dcols);
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}
