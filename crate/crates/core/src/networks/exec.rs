use crate::attention::{self, AttentionParams};
use crate::error::{Error, Result};
use crate::gradcheck::reference::{self, RefAttention, RefTensor};
use crate::tensor::{Axis, Dims5, Graph, Mode, ParamId, ParamStore, Var};

use super::{AttentionDef, LayerDef, Layout};

/// Backend for a network forward definition.
pub trait Exec {
    type V: Copy;

    fn dims(&self, v: Self::V) -> Dims5;
    /// Optional upsample, conv, optional batch norm, activation.
    fn layer(&mut self, x: Self::V, layer: &LayerDef) -> Result<Self::V>;
    fn attention(&mut self, hs: Self::V, hr: Option<Self::V>, def: &AttentionDef) -> Result<Self::V>;
    fn resize(&mut self, x: Self::V, target: [usize; 3]) -> Result<Self::V>;
    fn concat(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    /// `clamp(branch + input, 0, 1)`.
    fn residual_clamp(&mut self, branch: Self::V, input: Self::V) -> Result<Self::V>;
    fn check_unit_range(&self, op: &'static str, x: Self::V) -> Result<()>;
    fn record(&mut self, label: &str, v: Self::V);
}

/// Executes on a graph bound to the model's parameters.
pub struct GraphExec<'m, 'g, 'p> {
    model: &'m Layout,
    g: &'g mut Graph<'p>,
}

impl<'m, 'g, 'p> GraphExec<'m, 'g, 'p> {
    pub fn new(model: &'m Layout, g: &'g mut Graph<'p>) -> Self {
        Self { model, g }
    }

    fn attention_params(&self, def: &AttentionDef) -> Result<&'m AttentionParams> {
        self.model.attention_params(&def.name).ok_or_else(|| Error::InvalidInput {
            op: "network",
            reason: format!("unknown attention layer {}", def.name),
        })
    }
}

impl Exec for GraphExec<'_, '_, '_> {
    type V = Var;

    fn dims(&self, v: Var) -> Dims5 {
        self.g.dims(v)
    }

    fn layer(&mut self, x: Var, layer: &LayerDef) -> Result<Var> {
        let ids = *self.model.layer_ids(&layer.name).ok_or_else(|| Error::InvalidInput {
            op: "network",
            reason: format!("unknown layer {}", layer.name),
        })?;
        let g = &mut *self.g;
        let mut h = x;
        if layer.upsample {
            let d = g.dims(h);
            h = g.trilinear_resize(h, [d.t, d.h * 2, d.w * 2])?;
        }
        let (w, b) = (g.param(ids.weight), g.param(ids.bias));
        h = g.conv3d(h, w, b, layer.spec)?;
        if let Some(bn) = ids.bn {
            let (scale, shift) = (g.param(bn.scale), g.param(bn.shift));
            h = g.batch_norm(h, scale, shift, (bn.running_mean, bn.running_var))?;
        }
        h = g.activation(h, layer.act);
        g.record(layer.name.as_str(), h);
        Ok(h)
    }

    fn attention(&mut self, hs: Var, hr: Option<Var>, def: &AttentionDef) -> Result<Var> {
        let p = self.attention_params(def)?;
        let out = attention::source_reference_attention(self.g, hs, hr, p)?;
        self.g.record(def.name.as_str(), out.output);
        if let Some(w) = out.weights {
            self.g.record(format!("{}.weights", def.name), w);
        }
        Ok(out.output)
    }

    fn resize(&mut self, x: Var, target: [usize; 3]) -> Result<Var> {
        self.g.trilinear_resize(x, target)
    }

    fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.g.concat_channels(a, b)
    }

    fn residual_clamp(&mut self, branch: Var, input: Var) -> Result<Var> {
        let sum = self.g.add(branch, input)?;
        Ok(self.g.clamp(sum, 0.0, 1.0))
    }

    fn check_unit_range(&self, op: &'static str, x: Var) -> Result<()> {
        let data = self.g.value(x).data();
        match data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidInput {
                op,
                reason: format!("value {} at index {i} outside [0, 1]", data[i]),
            }),
        }
    }

    fn record(&mut self, label: &str, v: Var) {
        self.g.record(label, v);
    }
}

/// Propagates extents only; nothing is computed.
#[derive(Default)]
pub struct ShapeExec {
    values: Vec<Dims5>,
    trace: Vec<(String, Dims5)>,
}

impl ShapeExec {
    pub fn input(&mut self, dims: Dims5) -> usize {
        self.values.push(dims);
        self.values.len() - 1
    }

    pub fn into_trace(self) -> Vec<(String, Dims5)> {
        self.trace
    }

    fn push(&mut self, label: Option<&str>, dims: Dims5) -> usize {
        if let Some(label) = label {
            self.trace.push((label.to_string(), dims));
        }
        self.input(dims)
    }
}

impl Exec for ShapeExec {
    type V = usize;

    fn dims(&self, v: usize) -> Dims5 {
        self.values[v]
    }

    fn layer(&mut self, x: usize, layer: &LayerDef) -> Result<usize> {
        let d = self.values[x];
        layer.spec.validate()?;
        if d.c != layer.spec.in_channels {
            return Err(Error::Dimension {
                op: "conv3d",
                axis: Axis::Channel.name(),
                expected: layer.spec.in_channels,
                found: d.c,
            });
        }
        Ok(self.push(Some(&layer.name), layer.output_dims(d)))
    }

    fn attention(&mut self, hs: usize, hr: Option<usize>, def: &AttentionDef) -> Result<usize> {
        let sd = self.values[hs];
        attention::check_channels(sd.c)?;
        if sd.c != def.channels {
            return Err(Error::Dimension {
                op: "attention",
                axis: Axis::Channel.name(),
                expected: def.channels,
                found: sd.c,
            });
        }
        let out = self.push(Some(&def.name), sd);
        if let Some(hr) = hr {
            let rd = self.values[hr];
            let weights = Dims5::new(sd.b, rd.volume(), 1, 1, sd.volume());
            self.push(Some(&format!("{}.weights", def.name)), weights);
        }
        Ok(out)
    }

    fn resize(&mut self, x: usize, target: [usize; 3]) -> Result<usize> {
        let d = self.values[x];
        Ok(self.push(None, Dims5::new(d.b, d.c, target[0], target[1], target[2])))
    }

    fn concat(&mut self, a: usize, b: usize) -> Result<usize> {
        let (da, db) = (self.values[a], self.values[b]);
        for axis in [Axis::Batch, Axis::Time, Axis::Height, Axis::Width] {
            if da.get(axis) != db.get(axis) {
                return Err(Error::Dimension {
                    op: "concat",
                    axis: axis.name(),
                    expected: da.get(axis),
                    found: db.get(axis),
                });
            }
        }
        Ok(self.push(None, Dims5 { c: da.c + db.c, ..da }))
    }

    fn residual_clamp(&mut self, branch: usize, input: usize) -> Result<usize> {
        let (a, b) = (self.values[branch], self.values[input]);
        if a != b {
            return Err(Error::ShapeMismatch {
                op: "residual",
                left: a,
                right: b,
            });
        }
        Ok(self.push(None, a))
    }

    fn check_unit_range(&self, _op: &'static str, _x: usize) -> Result<()> {
        Ok(())
    }

    fn record(&mut self, label: &str, v: usize) {
        let d = self.values[v];
        self.trace.push((label.to_string(), d));
    }
}

/// Double-precision executor built from the reference primitives in
/// [`crate::gradcheck::reference`]. One parameter element may be overridden,
/// which is what finite differencing needs.
pub struct RefExec<'a> {
    layout: &'a Layout,
    store: &'a ParamStore,
    mode: Mode,
    override_: Option<(ParamId, usize, f64)>,
    values: Vec<RefTensor>,
}

impl<'a> RefExec<'a> {
    pub fn new(layout: &'a Layout, store: &'a ParamStore, mode: Mode) -> Self {
        Self {
            layout,
            store,
            mode,
            override_: None,
            values: Vec::new(),
        }
    }

    pub fn with_override(mut self, id: ParamId, index: usize, value: f64) -> Self {
        self.override_ = Some((id, index, value));
        self
    }

    pub fn input(&mut self, t: RefTensor) -> usize {
        self.values.push(t);
        self.values.len() - 1
    }

    pub fn value(&self, v: usize) -> &RefTensor {
        &self.values[v]
    }

    fn param(&self, id: ParamId) -> RefTensor {
        let mut t = RefTensor::from(self.store.tensor(id));
        if let Some((oid, i, v)) = self.override_ {
            if oid == id {
                t.data[i] = v;
            }
        }
        t
    }

    fn missing(name: &str) -> Error {
        Error::InvalidInput {
            op: "network",
            reason: format!("unknown layer {name}"),
        }
    }
}

impl Exec for RefExec<'_> {
    type V = usize;

    fn dims(&self, v: usize) -> Dims5 {
        self.values[v].dims
    }

    fn layer(&mut self, x: usize, layer: &LayerDef) -> Result<usize> {
        let ids = *self.layout.layer_ids(&layer.name).ok_or_else(|| Self::missing(&layer.name))?;
        let mut h = self.values[x].clone();
        if layer.upsample {
            let d = h.dims;
            h = reference::trilinear(&h, [d.t, d.h * 2, d.w * 2]);
        }
        h = reference::conv3d(&h, &self.param(ids.weight), &self.param(ids.bias), &layer.spec);
        if let Some(bn) = ids.bn {
            let (scale, shift) = (self.param(bn.scale), self.param(bn.shift));
            h = match self.mode {
                Mode::Train => reference::batch_norm_train(&h, &scale, &shift),
                Mode::Eval => reference::batch_norm_eval(
                    &h,
                    &scale,
                    &shift,
                    &self.param(bn.running_mean),
                    &self.param(bn.running_var),
                ),
            };
        }
        h = reference::activation(&h, layer.act);
        Ok(self.input(h))
    }

    fn attention(&mut self, hs: usize, hr: Option<usize>, def: &AttentionDef) -> Result<usize> {
        let hr = match hr {
            Some(hr) if self.values[hr].dims.numel() > 0 => hr,
            _ => return Ok(hs),
        };
        let p = self
            .layout
            .attention_params(&def.name)
            .ok_or_else(|| Self::missing(&def.name))?;
        let params = RefAttention {
            source_w: self.param(p.source_w),
            source_b: self.param(p.source_b),
            key_w: self.param(p.key_w),
            key_b: self.param(p.key_b),
            value_w: self.param(p.value_w),
            value_b: self.param(p.value_b),
            gamma: self.param(p.gamma).data[0],
        };
        let y = reference::attention(&self.values[hs], &self.values[hr], &params);
        Ok(self.input(y))
    }

    fn resize(&mut self, x: usize, target: [usize; 3]) -> Result<usize> {
        let y = reference::trilinear(&self.values[x], target);
        Ok(self.input(y))
    }

    fn concat(&mut self, a: usize, b: usize) -> Result<usize> {
        let y = reference::concat_channels(&self.values[a], &self.values[b]);
        Ok(self.input(y))
    }

    fn residual_clamp(&mut self, branch: usize, input: usize) -> Result<usize> {
        let (a, b) = (&self.values[branch], &self.values[input]);
        let data = a.data.iter().zip(&b.data).map(|(p, q)| (p + q).clamp(0.0, 1.0)).collect();
        let y = RefTensor::new(a.dims, data);
        Ok(self.input(y))
    }

    fn check_unit_range(&self, _op: &'static str, _x: usize) -> Result<()> {
        Ok(())
    }

    fn record(&mut self, _label: &str, _v: usize) {}
}
