//! Straightforward double-precision forward implementations of every
//! primitive, written from the textbook definitions with no code shared with
//! the engine kernels. They serve as forward oracles and as the function
//! differenced by [`super::check_op`].

use crate::tensor::{Activation, Axis, ConvSpec, Dims5, Padding, Tensor5, BN_EPS, ELU_ALPHA};

#[derive(Clone, Debug, PartialEq)]
pub struct RefTensor {
    pub dims: Dims5,
    pub data: Vec<f64>,
}

impl RefTensor {
    pub fn new(dims: Dims5, data: Vec<f64>) -> Self {
        assert_eq!(dims.numel(), data.len());
        Self { dims, data }
    }

    pub fn zeros(dims: Dims5) -> Self {
        Self::new(dims, vec![0.0; dims.numel()])
    }

    pub fn idx(&self, i: [usize; 5]) -> usize {
        let d = self.dims;
        (((i[0] * d.c + i[1]) * d.t + i[2]) * d.h + i[3]) * d.w + i[4]
    }

    pub fn at(&self, i: [usize; 5]) -> f64 {
        self.data[self.idx(i)]
    }

    fn set(&mut self, i: [usize; 5], v: f64) {
        let k = self.idx(i);
        self.data[k] = v;
    }

    fn indices(&self) -> impl Iterator<Item = [usize; 5]> {
        let d = self.dims;
        (0..d.b).flat_map(move |b| {
            (0..d.c).flat_map(move |c| {
                (0..d.t).flat_map(move |t| {
                    (0..d.h).flat_map(move |h| (0..d.w).map(move |w| [b, c, t, h, w]))
                })
            })
        })
    }
}

impl From<&Tensor5> for RefTensor {
    fn from(t: &Tensor5) -> Self {
        Self::new(t.dims(), t.data().iter().map(|&v| v as f64).collect())
    }
}

pub fn conv3d(x: &RefTensor, w: &RefTensor, bias: &RefTensor, spec: &ConvSpec) -> RefTensor {
    let d = x.dims;
    let [kt, kh, kw] = spec.kernel;
    let [st, sh, sw] = spec.stride;
    let out = Dims5::new(
        d.b,
        spec.out_channels,
        (d.t + st - 1) / st,
        (d.h + sh - 1) / sh,
        (d.w + sw - 1) / sw,
    );
    let resolve = |coord: i64, len: usize| -> Option<usize> {
        if (0..len as i64).contains(&coord) {
            Some(coord as usize)
        } else if spec.padding == Padding::Replicate {
            Some(coord.clamp(0, len as i64 - 1) as usize)
        } else {
            None
        }
    };
    let mut y = RefTensor::zeros(out);
    for b in 0..d.b {
        for co in 0..out.c {
            for to in 0..out.t {
                for ho in 0..out.h {
                    for wo in 0..out.w {
                        y.set([b, co, to, ho, wo], bias.data[co]);
                    }
                }
            }
            for ci in 0..d.c {
                for a in 0..kt {
                    for p in 0..kh {
                        for q in 0..kw {
                            let wv = w.at([co, ci, a, p, q]);
                            for to in 0..out.t {
                                let Some(ti) = resolve((to * st + a) as i64 - (kt / 2) as i64, d.t) else {
                                    continue;
                                };
                                for ho in 0..out.h {
                                    let Some(hi) = resolve((ho * sh + p) as i64 - (kh / 2) as i64, d.h) else {
                                        continue;
                                    };
                                    for wo in 0..out.w {
                                        let Some(wi) = resolve((wo * sw + q) as i64 - (kw / 2) as i64, d.w)
                                        else {
                                            continue;
                                        };
                                        let k = y.idx([b, co, to, ho, wo]);
                                        y.data[k] += wv * x.at([b, ci, ti, hi, wi]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Training-mode batch norm with biased batch variance.
pub fn batch_norm_train(x: &RefTensor, scale: &RefTensor, shift: &RefTensor) -> RefTensor {
    let d = x.dims;
    let mut y = x.clone();
    for c in 0..d.c {
        let members: Vec<usize> = x
            .indices()
            .filter(|i| i[1] == c)
            .map(|i| x.idx(i))
            .collect();
        let n = members.len() as f64;
        let mean = members.iter().map(|&k| x.data[k]).sum::<f64>() / n;
        let var = members.iter().map(|&k| (x.data[k] - mean).powi(2)).sum::<f64>() / n;
        for &k in &members {
            y.data[k] = (x.data[k] - mean) / (var + BN_EPS as f64).sqrt() * scale.data[c] + shift.data[c];
        }
    }
    y
}

pub fn activation(x: &RefTensor, kind: Activation) -> RefTensor {
    let f = |v: f64| match kind {
        Activation::Elu => {
            if v > 0.0 {
                v
            } else {
                ELU_ALPHA as f64 * (v.exp() - 1.0)
            }
        }
        Activation::Tanh => v.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
    };
    RefTensor::new(x.dims, x.data.iter().map(|&v| f(v)).collect())
}

/// Direct eight-corner trilinear interpolation, half-pixel sampling.
pub fn trilinear(x: &RefTensor, target: [usize; 3]) -> RefTensor {
    let d = x.dims;
    let out = Dims5::new(d.b, d.c, target[0], target[1], target[2]);
    let coord = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).max(0.0);
        let lo = (pos.floor() as usize).min(src_len - 1);
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut y = RefTensor::zeros(out);
    for o in y.indices().collect::<Vec<_>>() {
        let [b, c, t, h, w] = o;
        let (t0, t1, ft) = coord(t, d.t, out.t);
        let (h0, h1, fh) = coord(h, d.h, out.h);
        let (w0, w1, fw) = coord(w, d.w, out.w);
        let mut acc = 0.0;
        for (ti, wt) in [(t0, 1.0 - ft), (t1, ft)] {
            for (hi, wh) in [(h0, 1.0 - fh), (h1, fh)] {
                for (wi, ww) in [(w0, 1.0 - fw), (w1, fw)] {
                    acc += wt * wh * ww * x.at([b, c, ti, hi, wi]);
                }
            }
        }
        y.set(o, acc);
    }
    y
}

/// `op(a) * op(b)` per batch element over the `C x (T*H*W)` matrix view.
pub fn matmul(a: &RefTensor, b: &RefTensor, ta: bool, tb: bool) -> RefTensor {
    let (ra, ca) = (a.dims.c, a.dims.volume());
    let (rb, cb) = (b.dims.c, b.dims.volume());
    let get_a = |bi: usize, i: usize, k: usize| {
        let (r, c) = if ta { (k, i) } else { (i, k) };
        a.data[bi * ra * ca + r * ca + c]
    };
    let get_b = |bi: usize, k: usize, j: usize| {
        let (r, c) = if tb { (j, k) } else { (k, j) };
        b.data[bi * rb * cb + r * cb + c]
    };
    let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
    let n = if tb { rb } else { cb };
    let out = Dims5::new(a.dims.b, m, 1, 1, n);
    let mut data = Vec::with_capacity(out.numel());
    for bi in 0..a.dims.b {
        for i in 0..m {
            for j in 0..n {
                data.push((0..k).map(|p| get_a(bi, i, p) * get_b(bi, p, j)).sum());
            }
        }
    }
    RefTensor::new(out, data)
}

pub fn softmax(x: &RefTensor, axis: Axis) -> RefTensor {
    let mut y = x.clone();
    let len = x.dims.get(axis);
    for start in x.indices().filter(|i| i[axis as usize] == 0).collect::<Vec<_>>() {
        let members: Vec<usize> = (0..len)
            .map(|j| {
                let mut i = start;
                i[axis as usize] = j;
                x.idx(i)
            })
            .collect();
        let max = members.iter().map(|&k| x.data[k]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = members.iter().map(|&k| (x.data[k] - max).exp()).sum();
        for &k in &members {
            y.data[k] = (x.data[k] - max).exp() / z;
        }
    }
    y
}

pub fn concat_channels(a: &RefTensor, b: &RefTensor) -> RefTensor {
    let out = Dims5 {
        c: a.dims.c + b.dims.c,
        ..a.dims
    };
    let mut y = RefTensor::zeros(out);
    for i in y.indices().collect::<Vec<_>>() {
        let v = if i[1] < a.dims.c {
            a.at(i)
        } else {
            b.at([i[0], i[1] - a.dims.c, i[2], i[3], i[4]])
        };
        y.set(i, v);
    }
    y
}

/// Pointwise (1x1x1) convolution as an explicit channel mix.
pub fn pointwise(x: &RefTensor, w: &RefTensor, bias: &RefTensor) -> RefTensor {
    let d = x.dims;
    let cout = w.dims.b;
    let mut y = RefTensor::zeros(Dims5 { c: cout, ..d });
    for i in y.indices().collect::<Vec<_>>() {
        let [b, co, t, h, ww] = i;
        let v = bias.data[co]
            + (0..d.c)
                .map(|ci| w.at([co, ci, 0, 0, 0]) * x.at([b, ci, t, h, ww]))
                .sum::<f64>();
        y.set(i, v);
    }
    y
}

/// Weights of one source-reference attention layer in double precision.
#[derive(Clone, Debug)]
pub struct RefAttention {
    pub source_w: RefTensor,
    pub source_b: RefTensor,
    pub key_w: RefTensor,
    pub key_b: RefTensor,
    pub value_w: RefTensor,
    pub value_b: RefTensor,
    pub gamma: f64,
}

/// `h_s + gamma * reshape(value(h_r) * softmax_over_ref(key(h_r)^T source(h_s)))`,
/// evaluated position by position.
pub fn attention(hs: &RefTensor, hr: &RefTensor, p: &RefAttention) -> RefTensor {
    let q = pointwise(hs, &p.source_w, &p.source_b);
    let k = pointwise(hr, &p.key_w, &p.key_b);
    let v = pointwise(hr, &p.value_w, &p.value_b);
    let (ns, nr) = (hs.dims.volume(), hr.dims.volume());
    let (cq, c) = (q.dims.c, hs.dims.c);
    let mut y = hs.clone();
    for b in 0..hs.dims.b {
        for s in 0..ns {
            let logits: Vec<f64> = (0..nr)
                .map(|r| {
                    (0..cq)
                        .map(|ch| k.data[(b * cq + ch) * nr + r] * q.data[(b * cq + ch) * ns + s])
                        .sum()
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            for ch in 0..c {
                let mixed: f64 = (0..nr)
                    .map(|r| v.data[(b * c + ch) * nr + r] * (logits[r] - max).exp() / z)
                    .sum();
                y.data[(b * c + ch) * ns + s] += p.gamma * mixed;
            }
        }
    }
    y
}

/// Inference-mode batch norm from running statistics.
pub fn batch_norm_eval(
    x: &RefTensor,
    scale: &RefTensor,
    shift: &RefTensor,
    mean: &RefTensor,
    var: &RefTensor,
) -> RefTensor {
    let mut y = x.clone();
    for i in x.indices() {
        let c = i[1];
        let k = x.idx(i);
        y.data[k] = (x.data[k] - mean.data[c]) / (var.data[c] + BN_EPS as f64).sqrt() * scale.data[c]
            + shift.data[c];
    }
    y
}
