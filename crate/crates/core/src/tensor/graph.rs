//! Operation tape and reverse sweep.

use std::borrow::Cow;
use std::collections::HashMap;

use super::ops::{conv, linalg, norm, pointwise, resize, Activation, ConvSpec};
use super::params::{ParamId, ParamStore};
use super::{check_axis, Axis, Dims5, Tensor5};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Batch-norm behaviour for the whole graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running estimates are queued as [`StatUpdate`]s.
    Train,
    /// Frozen running statistics.
    Eval,
}

/// Pending running-statistics update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<f32>,
    pub batch_var: Vec<f32>,
}

enum Op {
    Leaf(Option<ParamId>),
    Conv3d {
        x: Var,
        w: Var,
        b: Var,
        spec: ConvSpec,
    },
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        mean: Vec<f32>,
        inv_std: Vec<f32>,
        batch_stats: bool,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Resize {
        x: Var,
        target: [usize; 3],
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Softmax {
        x: Var,
        axis: Axis,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Reshape {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ScaleBy {
        x: Var,
        s: Var,
    },
    ScaleConst {
        x: Var,
        factor: f32,
    },
    Clamp {
        x: Var,
        lo: f32,
        hi: f32,
    },
    Sum {
        x: Var,
    },
    L1Mean {
        pred: Var,
        target: Var,
    },
}

struct Node<'p> {
    value: Cow<'p, Tensor5>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated once.
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    params: Option<&'p ParamStore>,
    param_vars: HashMap<ParamId, Var>,
    mode: Mode,
    stat_updates: Vec<StatUpdate>,
    trace: Option<Vec<(String, Dims5)>>,
}

/// Gradients of a scalar with respect to every differentiable leaf.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    params: Vec<(ParamId, Vec<f32>)>,
    leaves: HashMap<Var, Vec<f32>>,
}

impl Gradients {
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f32])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn param(&self, id: ParamId) -> Option<&[f32]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    /// Gradient of a non-parameter leaf created with `requires_grad`.
    pub fn wrt(&self, var: Var) -> Option<&[f32]> {
        self.leaves.get(&var).map(Vec::as_slice)
    }
}

impl<'p> Graph<'p> {
    pub fn new(mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            params: None,
            param_vars: HashMap::new(),
            mode,
            stat_updates: Vec::new(),
            trace: None,
        }
    }

    pub fn with_params(params: &'p ParamStore, mode: Mode) -> Self {
        Self {
            params: Some(params),
            ..Self::new(mode)
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor5>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor5, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Cow::Owned(value), op, requires_grad)
    }

    /// Records an input leaf; its `requires_grad` flag is honoured.
    pub fn input(&mut self, tensor: Tensor5) -> Result<Var> {
        tensor.ensure_finite("graph input")?;
        let rg = tensor.requires_grad;
        Ok(self.push(Cow::Owned(tensor), Op::Leaf(None), rg))
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, tensor: Tensor5) -> Var {
        self.push(Cow::Owned(tensor), Op::Leaf(None), false)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same var.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self
            .params
            .expect("graph was created without a parameter store");
        let p = store.get(id);
        let v = self.push(Cow::Borrowed(&p.tensor), Op::Leaf(Some(id)), p.trainable);
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor5 {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> Dims5 {
        self.nodes[v.0].value.dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Starts recording `(label, dims)` pairs through [`Graph::record`].
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn record(&mut self, label: impl Into<String>, v: Var) {
        let dims = self.dims(v);
        if let Some(trace) = self.trace.as_mut() {
            trace.push((label.into(), dims));
        }
    }

    pub fn trace(&self) -> &[(String, Dims5)] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        conv::check_conv_shapes(self.dims(x), self.dims(w), self.dims(b), &spec)?;
        let y = conv::conv3d_forward(self.value(x), self.value(w), self.value(b), &spec);
        Ok(self.push_op(y, Op::Conv3d { x, w, b, spec }, &[x, w, b]))
    }

    /// Per-channel batch normalisation. `running` holds the `(mean, var)`
    /// buffers read in [`Mode::Eval`] and updated in [`Mode::Train`].
    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        running: (ParamId, ParamId),
    ) -> Result<Var> {
        let d = self.dims(x);
        if d.b * d.volume() == 0 || d.c == 0 {
            return Err(Error::InvalidInput {
                op: "batch_norm",
                reason: format!("channel with no elements in {d}"),
            });
        }
        check_axis("batch_norm scale", Axis::Channel, d.c, self.dims(scale).numel())?;
        check_axis("batch_norm shift", Axis::Channel, d.c, self.dims(shift).numel())?;
        let (mean, inv_std, batch_stats) = match self.mode {
            Mode::Train => {
                let stats = norm::batch_stats(self.value(x));
                self.stat_updates.push(StatUpdate {
                    running_mean: running.0,
                    running_var: running.1,
                    batch_mean: stats.mean.clone(),
                    batch_var: stats.var_unbiased,
                });
                (stats.mean, stats.inv_std, true)
            }
            Mode::Eval => {
                let store = self.params.expect("eval-mode batch norm needs a parameter store");
                let mean = store.tensor(running.0).data().to_vec();
                let inv_std = store
                    .tensor(running.1)
                    .data()
                    .iter()
                    .map(|v| 1.0 / (v + norm::BN_EPS).sqrt())
                    .collect();
                (mean, inv_std, false)
            }
        };
        let y = norm::normalize(
            self.value(x),
            &mean,
            &inv_std,
            self.value(scale).data(),
            self.value(shift).data(),
        );
        Ok(self.push_op(
            y,
            Op::BatchNorm {
                x,
                scale,
                shift,
                mean,
                inv_std,
                batch_stats,
            },
            &[x, scale, shift],
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let mut y = self.value(x).clone();
        y.requires_grad = false;
        y.grad = None;
        y.data_mut().iter_mut().for_each(|v| *v = kind.apply(*v));
        self.push_op(y, Op::Act { x, kind }, &[x])
    }

    /// Trilinear resize of `(T, H, W)` to `target`.
    pub fn trilinear_resize(&mut self, x: Var, target: [usize; 3]) -> Result<Var> {
        if target.contains(&0) {
            return Err(Error::InvalidInput {
                op: "trilinear_resize",
                reason: format!("target extents {target:?} must be positive"),
            });
        }
        let y = resize::trilinear_forward(self.value(x), target);
        Ok(self.push_op(y, Op::Resize { x, target }, &[x]))
    }

    /// Batched `op(a) * op(b)` over the `(C) x (T*H*W)` matrix view.
    pub fn matmul_batched(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let y = linalg::matmul_forward(self.value(a), self.value(b), ta, tb)?;
        Ok(self.push_op(y, Op::MatMul { a, b, ta, tb }, &[a, b]))
    }

    pub fn softmax_axis(&mut self, x: Var, axis: Axis) -> Var {
        let y = linalg::softmax_forward(self.value(x), axis);
        self.push_op(y, Op::Softmax { x, axis }, &[x])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = linalg::concat_forward(self.value(a), self.value(b))?;
        Ok(self.push_op(y, Op::Concat { a, b }, &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, dims: Dims5) -> Result<Var> {
        let mut y = self.value(x).clone();
        y.requires_grad = false;
        let y = y.reshaped(dims)?;
        Ok(self.push_op(y, Op::Reshape { x }, &[x]))
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::ShapeMismatch {
                op,
                left: da,
                right: db,
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Tensor5 {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor5::new(self.dims(a), data).expect("same dims")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("add", a, b)?;
        let y = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push_op(y, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("mul", a, b)?;
        let y = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push_op(y, Op::Mul { a, b }, &[a, b]))
    }

    /// Multiplies every element of `x` by the single-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        check_axis("scale_by", Axis::Channel, 1, self.dims(s).numel())?;
        let k = self.value(s).item();
        let data = self.value(x).data().iter().map(|v| v * k).collect();
        let y = Tensor5::new(self.dims(x), data)?;
        Ok(self.push_op(y, Op::ScaleBy { x, s }, &[x, s]))
    }

    pub fn scale_const(&mut self, x: Var, factor: f32) -> Var {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let y = Tensor5::new(self.dims(x), data).expect("same dims");
        self.push_op(y, Op::ScaleConst { x, factor }, &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|v| v.clamp(lo, hi))
            .collect();
        let y = Tensor5::new(self.dims(x), data).expect("same dims");
        self.push_op(y, Op::Clamp { x, lo, hi }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        self.push_op(Tensor5::scalar(s as f32), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.dims(x).numel().max(1);
        let s = self.sum(x);
        self.scale_const(s, 1.0 / n as f32)
    }

    /// Mean absolute difference.
    pub fn l1_mean(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_dims("l1_mean", pred, target)?;
        let n = self.dims(pred).numel().max(1) as f64;
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(&p, &t)| (p as f64 - t as f64).abs())
            .sum();
        let y = Tensor5::scalar((s / n) as f32);
        Ok(self.push_op(y, Op::L1Mean { pred, target }, &[pred, target]))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let ld = self.dims(loss);
        if ld.numel() != 1 {
            return Err(Error::NonScalarLoss(ld));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let rg = |v: Var| self.nodes[v.0].requires_grad;
            let val = |v: Var| -> &Tensor5 { &self.nodes[v.0].value };
            let mut send = |v: Var, contrib: Vec<f32>| accumulate(&mut grads[v.0], contrib);

            match &node.op {
                Op::Leaf(param) => match param {
                    Some(id) => out.params.push((*id, g)),
                    None => {
                        out.leaves.insert(Var(i), g);
                    }
                },
                Op::Conv3d { x, w, b, spec } => {
                    let cg = conv::conv3d_backward(val(*x), val(*w), &g, spec, [rg(*x), rg(*w), rg(*b)]);
                    if let Some(dx) = cg.dx {
                        send(*x, dx);
                    }
                    if let Some(dw) = cg.dw {
                        send(*w, dw);
                    }
                    if let Some(db) = cg.db {
                        send(*b, db);
                    }
                }
                Op::BatchNorm {
                    x,
                    scale,
                    shift,
                    mean,
                    inv_std,
                    batch_stats,
                } => {
                    let bg = norm::backward(
                        val(*x),
                        &g,
                        mean,
                        inv_std,
                        val(*scale).data(),
                        *batch_stats,
                    );
                    if rg(*x) {
                        send(*x, bg.dx);
                    }
                    if rg(*scale) {
                        send(*scale, bg.dscale);
                    }
                    if rg(*shift) {
                        send(*shift, bg.dshift);
                    }
                }
                Op::Act { x, kind } => {
                    let xs = val(*x).data();
                    let ys = node.value.data();
                    let dx = g
                        .iter()
                        .zip(xs.iter().zip(ys))
                        .map(|(gv, (&xv, &yv))| gv * kind.derivative(xv, yv))
                        .collect();
                    send(*x, dx);
                }
                Op::Resize { x, target } => {
                    send(*x, resize::trilinear_backward(val(*x).dims(), *target, &g));
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (da, db) =
                        linalg::matmul_backward(val(*a), val(*b), *ta, *tb, &g, [rg(*a), rg(*b)]);
                    if let Some(da) = da {
                        send(*a, da);
                    }
                    if let Some(db) = db {
                        send(*b, db);
                    }
                }
                Op::Softmax { x, axis } => {
                    send(*x, linalg::softmax_backward(&node.value, *axis, &g));
                }
                Op::Concat { a, b } => {
                    let (da, db) = linalg::concat_backward(val(*a).dims(), val(*b).dims(), &g);
                    if rg(*a) {
                        send(*a, da);
                    }
                    if rg(*b) {
                        send(*b, db);
                    }
                }
                Op::Reshape { x } => send(*x, g),
                Op::Add { a, b } => {
                    if rg(*a) && rg(*b) {
                        send(*a, g.clone());
                        send(*b, g);
                    } else if rg(*a) {
                        send(*a, g);
                    } else {
                        send(*b, g);
                    }
                }
                Op::Mul { a, b } => {
                    if rg(*a) {
                        let d = g.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                        send(*a, d);
                    }
                    if rg(*b) {
                        let d = g.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                        send(*b, d);
                    }
                }
                Op::ScaleBy { x, s } => {
                    if rg(*x) {
                        let k = val(*s).item();
                        send(*x, g.iter().map(|v| v * k).collect());
                    }
                    if rg(*s) {
                        let ds: f64 = g
                            .iter()
                            .zip(val(*x).data())
                            .map(|(&a, &b)| a as f64 * b as f64)
                            .sum();
                        send(*s, vec![ds as f32]);
                    }
                }
                Op::ScaleConst { x, factor } => {
                    send(*x, g.iter().map(|v| v * factor).collect());
                }
                Op::Clamp { x, lo, hi } => {
                    let dx = g
                        .iter()
                        .zip(val(*x).data())
                        .map(|(&gv, &xv)| if xv >= *lo && xv <= *hi { gv } else { 0.0 })
                        .collect();
                    send(*x, dx);
                }
                Op::Sum { x } => {
                    send(*x, vec![g[0]; val(*x).numel()]);
                }
                Op::L1Mean { pred, target } => {
                    let n = val(*pred).numel().max(1) as f32;
                    let signs: Vec<f32> = val(*pred)
                        .data()
                        .iter()
                        .zip(val(*target).data())
                        .map(|(&p, &t)| pointwise::l1_sign(p - t) * g[0] / n)
                        .collect();
                    if rg(*target) {
                        send(*target, signs.iter().map(|v| -v).collect());
                    }
                    if rg(*pred) {
                        send(*pred, signs);
                    }
                }
            }
        }
        out.params.sort_by_key(|(id, _)| *id);
        Ok(out)
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, contrib: Vec<f32>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
        None => *slot = Some(contrib),
    }
}
