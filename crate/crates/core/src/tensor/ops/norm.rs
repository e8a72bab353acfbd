use crate::tensor::Tensor5;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Per-channel statistics computed over `(batch, time, height, width)`.
pub(crate) struct BatchStats {
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
    /// Unbiased variance, folded into the running estimate.
    pub var_unbiased: Vec<f32>,
}

fn channel_slices(x: &Tensor5, c: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
    let d = x.dims();
    let vol = d.volume();
    (0..d.b).map(move |b| {
        let start = (b * d.c + c) * vol;
        start..start + vol
    })
}

pub(crate) fn batch_stats(x: &Tensor5) -> BatchStats {
    let d = x.dims();
    let n = (d.b * d.volume()) as f64;
    let mut stats = BatchStats {
        mean: Vec::with_capacity(d.c),
        inv_std: Vec::with_capacity(d.c),
        var_unbiased: Vec::with_capacity(d.c),
    };
    for c in 0..d.c {
        let mut sum = 0.0f64;
        for r in channel_slices(x, c) {
            sum += x.data()[r].iter().map(|&v| v as f64).sum::<f64>();
        }
        let mean = sum / n;
        let mut sq = 0.0f64;
        for r in channel_slices(x, c) {
            sq += x.data()[r]
                .iter()
                .map(|&v| {
                    let e = v as f64 - mean;
                    e * e
                })
                .sum::<f64>();
        }
        let var = sq / n;
        stats.mean.push(mean as f32);
        stats.inv_std.push((1.0 / (var + BN_EPS as f64).sqrt()) as f32);
        let unbiased = if n > 1.0 { sq / (n - 1.0) } else { var };
        stats.var_unbiased.push(unbiased as f32);
    }
    stats
}

/// `y = (x - mean) * inv_std * scale + shift`, channel-wise.
pub(crate) fn normalize(x: &Tensor5, mean: &[f32], inv_std: &[f32], scale: &[f32], shift: &[f32]) -> Tensor5 {
    let d = x.dims();
    let mut out = x.clone();
    out.requires_grad = false;
    out.grad = None;
    let vol = d.volume();
    for (i, chunk) in out.data_mut().chunks_mut(vol).enumerate() {
        let c = i % d.c;
        let (m, s, g, b) = (mean[c], inv_std[c], scale[c], shift[c]);
        for v in chunk {
            *v = (*v - m) * s * g + b;
        }
    }
    out
}

pub(crate) struct BnGrads {
    pub dx: Vec<f32>,
    pub dscale: Vec<f32>,
    pub dshift: Vec<f32>,
}

/// Backward pass; `batch_stats` selects between training-mode statistics
/// (mean and variance depend on `x`) and frozen running statistics.
pub(crate) fn backward(
    x: &Tensor5,
    dy: &[f32],
    mean: &[f32],
    inv_std: &[f32],
    scale: &[f32],
    batch_stats: bool,
) -> BnGrads {
    let d = x.dims();
    let n = (d.b * d.volume()) as f64;
    let mut dx = vec![0.0f32; d.numel()];
    let mut dscale = vec![0.0f32; d.c];
    let mut dshift = vec![0.0f32; d.c];
    for c in 0..d.c {
        let (m, s) = (mean[c] as f64, inv_std[c] as f64);
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for r in channel_slices(x, c) {
            for (&xv, &g) in x.data()[r.clone()].iter().zip(&dy[r]) {
                let xhat = (xv as f64 - m) * s;
                sum_dy += g as f64;
                sum_dy_xhat += g as f64 * xhat;
            }
        }
        dscale[c] = sum_dy_xhat as f32;
        dshift[c] = sum_dy as f32;
        let gamma = scale[c] as f64;
        for r in channel_slices(x, c) {
            for ((&xv, &g), out) in x.data()[r.clone()]
                .iter()
                .zip(&dy[r.clone()])
                .zip(&mut dx[r])
            {
                let v = if batch_stats {
                    let xhat = (xv as f64 - m) * s;
                    gamma * s * (g as f64 - sum_dy / n - xhat * sum_dy_xhat / n)
                } else {
                    gamma * s * g as f64
                };
                *out = v as f32;
            }
        }
    }
    BnGrads { dx, dscale, dshift }
}
