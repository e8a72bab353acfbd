//! Batched matrix products, axis softmax and channel concatenation.
//!
//! A tensor `(B, C, T, H, W)` is viewed as `B` row-major matrices of
//! `C` rows by `T*H*W` columns. Products come back as `(B, M, 1, 1, N)`.

use crate::error::{Error, Result};
use crate::tensor::{check_axis, gemm, Axis, Dims5, MatRef, Tensor5};

fn view(t: &Tensor5, b: usize) -> MatRef<'_> {
    let d = t.dims();
    let (rows, cols) = (d.c, d.volume());
    MatRef::row_major(&t.data()[b * rows * cols..(b + 1) * rows * cols], rows, cols)
}

fn maybe_t(m: MatRef<'_>, flag: bool) -> MatRef<'_> {
    if flag {
        m.t()
    } else {
        m
    }
}

pub(crate) fn matmul_dims(a: Dims5, b: Dims5, ta: bool, tb: bool) -> Result<Dims5> {
    check_axis("matmul_batched", Axis::Batch, a.b, b.b)?;
    let (am, ak) = if ta { (a.volume(), a.c) } else { (a.c, a.volume()) };
    let (bk, bn) = if tb { (b.volume(), b.c) } else { (b.c, b.volume()) };
    if ak != bk {
        return Err(Error::Dimension {
            op: "matmul_batched",
            axis: "inner",
            expected: ak,
            found: bk,
        });
    }
    Ok(Dims5::new(a.b, am, 1, 1, bn))
}

pub(crate) fn matmul_forward(a: &Tensor5, b: &Tensor5, ta: bool, tb: bool) -> Result<Tensor5> {
    let out = matmul_dims(a.dims(), b.dims(), ta, tb)?;
    let (m, n) = (out.c, out.w);
    let mut y = vec![0.0f32; out.numel()];
    for bi in 0..out.b {
        gemm(
            1.0,
            maybe_t(view(a, bi), ta),
            maybe_t(view(b, bi), tb),
            0.0,
            &mut y[bi * m * n..(bi + 1) * m * n],
            n,
            1,
        );
    }
    Tensor5::new(out, y)
}

/// Gradients of `op(a) * op(b)` for the stored (untransposed) operands.
pub(crate) fn matmul_backward(
    a: &Tensor5,
    b: &Tensor5,
    ta: bool,
    tb: bool,
    dy: &[f32],
    need: [bool; 2],
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let (ad, bd) = (a.dims(), b.dims());
    let (m, k) = if ta { (ad.volume(), ad.c) } else { (ad.c, ad.volume()) };
    let n = if tb { bd.c } else { bd.volume() };
    let mut da = need[0].then(|| vec![0.0f32; a.numel()]);
    let mut db = need[1].then(|| vec![0.0f32; b.numel()]);
    for bi in 0..ad.b {
        let g = MatRef::row_major(&dy[bi * m * n..(bi + 1) * m * n], m, n);
        if let Some(da) = da.as_mut() {
            // d op(a) = g * op(b)^T, written back through the transpose if any.
            let (rs, cs) = if ta { (1, m) } else { (k, 1) };
            let out = &mut da[bi * m * k..(bi + 1) * m * k];
            gemm(1.0, g, maybe_t(view(b, bi), tb).t(), 0.0, out, rs, cs);
        }
        if let Some(db) = db.as_mut() {
            // d op(b) = op(a)^T * g
            let (rs, cs) = if tb { (1, k) } else { (n, 1) };
            let out = &mut db[bi * k * n..(bi + 1) * k * n];
            gemm(1.0, maybe_t(view(a, bi), ta).t(), g, 0.0, out, rs, cs);
        }
    }
    (da, db)
}

fn split(d: Dims5, axis: Axis) -> (usize, usize, usize) {
    let a = d.as_array();
    let i = axis as usize;
    (a[..i].iter().product(), a[i], a[i + 1..].iter().product())
}

pub(crate) fn softmax_forward(x: &Tensor5, axis: Axis) -> Tensor5 {
    let (outer, len, inner) = split(x.dims(), axis);
    let mut y = vec![0.0f32; x.numel()];
    let data = x.data();
    let mut buf = vec![0.0f64; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let max = (0..len)
                .map(|j| data[base + j * inner])
                .fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for (j, e) in buf.iter_mut().enumerate() {
                *e = ((data[base + j * inner] - max) as f64).exp();
                sum += *e;
            }
            for (j, e) in buf.iter().enumerate() {
                y[base + j * inner] = (e / sum) as f32;
            }
        }
    }
    Tensor5::new(x.dims(), y).expect("same dims")
}

pub(crate) fn softmax_backward(y: &Tensor5, axis: Axis, dy: &[f32]) -> Vec<f32> {
    let (outer, len, inner) = split(y.dims(), axis);
    let yd = y.data();
    let mut dx = vec![0.0f32; y.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let dot: f64 = (0..len)
                .map(|j| yd[base + j * inner] as f64 * dy[base + j * inner] as f64)
                .sum();
            for j in 0..len {
                let idx = base + j * inner;
                dx[idx] = (yd[idx] as f64 * (dy[idx] as f64 - dot)) as f32;
            }
        }
    }
    dx
}

pub(crate) fn concat_dims(a: Dims5, b: Dims5) -> Result<Dims5> {
    for axis in [Axis::Batch, Axis::Time, Axis::Height, Axis::Width] {
        check_axis("concat_channels", axis, a.get(axis), b.get(axis))?;
    }
    Ok(Dims5 { c: a.c + b.c, ..a })
}

pub(crate) fn concat_forward(a: &Tensor5, b: &Tensor5) -> Result<Tensor5> {
    let out = concat_dims(a.dims(), b.dims())?;
    let (sa, sb) = (a.dims().c * out.volume(), b.dims().c * out.volume());
    let mut y = Vec::with_capacity(out.numel());
    for bi in 0..out.b {
        y.extend_from_slice(&a.data()[bi * sa..(bi + 1) * sa]);
        y.extend_from_slice(&b.data()[bi * sb..(bi + 1) * sb]);
    }
    Tensor5::new(out, y)
}

pub(crate) fn concat_backward(a: Dims5, b: Dims5, dy: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let vol = a.volume();
    let (sa, sb) = (a.c * vol, b.c * vol);
    let mut da = Vec::with_capacity(a.numel());
    let mut db = Vec::with_capacity(b.numel());
    for bi in 0..a.b {
        let chunk = &dy[bi * (sa + sb)..(bi + 1) * (sa + sb)];
        da.extend_from_slice(&chunk[..sa]);
        db.extend_from_slice(&chunk[sa..]);
    }
    (da, db)
}
