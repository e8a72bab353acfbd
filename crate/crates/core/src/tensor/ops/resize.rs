//! Separable trilinear interpolation with the half-pixel (align-corners =
//! false) sampling convention.

use crate::tensor::{Axis, Dims5, Tensor5};

/// Source taps for every destination index along one axis.
#[derive(Clone, Debug)]
pub(crate) struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f32>,
}

impl AxisTaps {
    pub fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut taps = AxisTaps {
            lo: Vec::with_capacity(dst),
            hi: Vec::with_capacity(dst),
            frac: Vec::with_capacity(dst),
        };
        for j in 0..dst {
            let pos = ((j as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.frac.push((pos - lo as f64) as f32);
        }
        taps
    }
}

fn split(d: Dims5, axis: Axis) -> (usize, usize) {
    let a = d.as_array();
    let i = axis as usize;
    (a[..i].iter().product(), a[i + 1..].iter().product())
}

fn forward_axis(x: &[f32], d: Dims5, axis: Axis, dst: usize) -> (Vec<f32>, Dims5) {
    let src = d.get(axis);
    let out_dims = d.with(axis, dst);
    let taps = AxisTaps::new(src, dst);
    let (outer, inner) = split(d, axis);
    let mut y = vec![0.0f32; out_dims.numel()];
    for o in 0..outer {
        let xs = &x[o * src * inner..(o + 1) * src * inner];
        let ys = &mut y[o * dst * inner..(o + 1) * dst * inner];
        for j in 0..dst {
            let (lo, hi, f) = (taps.lo[j], taps.hi[j], taps.frac[j]);
            let a = &xs[lo * inner..(lo + 1) * inner];
            let b = &xs[hi * inner..(hi + 1) * inner];
            for ((out, &va), &vb) in ys[j * inner..(j + 1) * inner].iter_mut().zip(a).zip(b) {
                *out = va * (1.0 - f) + vb * f;
            }
        }
    }
    (y, out_dims)
}

fn backward_axis(dy: &[f32], d_in: Dims5, axis: Axis, dst: usize) -> Vec<f32> {
    let src = d_in.get(axis);
    let taps = AxisTaps::new(src, dst);
    let (outer, inner) = split(d_in, axis);
    let mut dx = vec![0.0f32; d_in.numel()];
    for o in 0..outer {
        let gs = &dy[o * dst * inner..(o + 1) * dst * inner];
        let xs = &mut dx[o * src * inner..(o + 1) * src * inner];
        for j in 0..dst {
            let (lo, hi, f) = (taps.lo[j], taps.hi[j], taps.frac[j]);
            let g = &gs[j * inner..(j + 1) * inner];
            for (i, &gv) in g.iter().enumerate() {
                xs[lo * inner + i] += gv * (1.0 - f);
                xs[hi * inner + i] += gv * f;
            }
        }
    }
    dx
}

const RESIZE_AXES: [Axis; 3] = [Axis::Width, Axis::Height, Axis::Time];

pub(crate) fn trilinear_forward(x: &Tensor5, target: [usize; 3]) -> Tensor5 {
    let mut dims = x.dims();
    let mut data = x.data().to_vec();
    for axis in RESIZE_AXES {
        let dst = target[axis as usize - 2];
        if dims.get(axis) != dst {
            let (y, d) = forward_axis(&data, dims, axis, dst);
            data = y;
            dims = d;
        }
    }
    Tensor5::new(dims, data).expect("resize output sized from dims")
}

pub(crate) fn trilinear_backward(input: Dims5, target: [usize; 3], dy: &[f32]) -> Vec<f32> {
    // Replay the forward axis order to know each intermediate shape.
    let mut shapes = Vec::with_capacity(3);
    let mut dims = input;
    for axis in RESIZE_AXES {
        let dst = target[axis as usize - 2];
        if dims.get(axis) != dst {
            shapes.push((dims, axis, dst));
            dims = dims.with(axis, dst);
        }
    }
    let mut grad = dy.to_vec();
    for &(d_in, axis, dst) in shapes.iter().rev() {
        grad = backward_axis(&grad, d_in, axis, dst);
    }
    grad
}
