//! Source-reference attention and its self-attention special case.
//!
//! Source features `h_s` of shape `(B, C, T_s, H_s, W_s)` attend over
//! reference features `h_r` of shape `(B, C_r, N_r, H_r, W_r)`:
//!
//! ```text
//! A(h_s, h_r) = h_s + gamma * reshape(e_t(h_r) . softmax(e_r(h_r)^T . e_s(h_s)))
//! ```
//!
//! `e_s`, `e_r` map to `C' = C / 8` channels and `e_t` maps to `C` channels;
//! all three are 1x1x1 convolutions with bias. The softmax normalises over
//! reference positions, so every source position receives a convex
//! combination of reference values. Each batch element attends only to its
//! own references.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Axis, ConvSpec, Dims5, Graph, ParamId, ParamStore, Tensor5, Var};

/// Channel reduction factor of the query and key encoders.
pub const REDUCTION: usize = 8;

/// Parameter handles for one attention layer.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub channels: usize,
    pub ref_channels: usize,
    pub source_w: ParamId,
    pub source_b: ParamId,
    pub key_w: ParamId,
    pub key_b: ParamId,
    pub value_w: ParamId,
    pub value_b: ParamId,
    pub gamma: ParamId,
}

/// Graph leaves of an attention layer, see [`AttentionParams::bind`].
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub source_w: Var,
    pub source_b: Var,
    pub key_w: Var,
    pub key_b: Var,
    pub value_w: Var,
    pub value_b: Var,
    pub gamma: Var,
}

/// Output of an attention layer plus the `(B, N_ref, 1, 1, N_src)` weight
/// matrix when references were present.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub output: Var,
    pub weights: Option<Var>,
}

pub fn check_channels(channels: usize) -> Result<()> {
    if channels == 0 || channels % REDUCTION != 0 {
        return Err(Error::InvalidInput {
            op: "attention",
            reason: format!("channel count {channels} is not a positive multiple of {REDUCTION}"),
        });
    }
    Ok(())
}

/// Number of attention-matrix entries per batch element.
pub fn matrix_len(source: Dims5, reference: Dims5) -> usize {
    source.volume() * reference.volume()
}

impl AttentionParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        ref_channels: usize,
        gamma_init: f32,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        check_channels(channels)?;
        let reduced = channels / REDUCTION;
        let source = ConvSpec::pointwise(channels, reduced);
        let key = ConvSpec::pointwise(ref_channels, reduced);
        let value = ConvSpec::pointwise(ref_channels, channels);
        let mut conv = |name: &str, spec: ConvSpec| {
            let w = store.add_kaiming(format!("{prefix}.{name}.weight"), spec.weight_dims(), rng);
            let b = store.add(format!("{prefix}.{name}.bias"), Tensor5::zeros(spec.bias_dims()), true);
            (w, b)
        };
        let (source_w, source_b) = conv("source", source);
        let (key_w, key_b) = conv("key", key);
        let (value_w, value_b) = conv("value", value);
        let gamma = store.add(format!("{prefix}.gamma"), Tensor5::scalar(gamma_init), true);
        Ok(Self {
            channels,
            ref_channels,
            source_w,
            source_b,
            key_w,
            key_b,
            value_w,
            value_b,
            gamma,
        })
    }

    /// Looks up a layer previously created by [`AttentionParams::new`].
    pub fn from_store(store: &ParamStore, prefix: &str, channels: usize, ref_channels: usize) -> Result<Self> {
        check_channels(channels)?;
        let id = |name: &str| {
            let full = format!("{prefix}.{name}");
            store.id(&full).ok_or_else(|| Error::InvalidInput {
                op: "attention",
                reason: format!("parameter {full} not found"),
            })
        };
        Ok(Self {
            channels,
            ref_channels,
            source_w: id("source.weight")?,
            source_b: id("source.bias")?,
            key_w: id("key.weight")?,
            key_b: id("key.bias")?,
            value_w: id("value.weight")?,
            value_b: id("value.bias")?,
            gamma: id("gamma")?,
        })
    }

    pub fn reduced(&self) -> usize {
        self.channels / REDUCTION
    }

    pub fn bind(&self, g: &mut Graph<'_>) -> AttentionVars {
        AttentionVars {
            source_w: g.param(self.source_w),
            source_b: g.param(self.source_b),
            key_w: g.param(self.key_w),
            key_b: g.param(self.key_b),
            value_w: g.param(self.value_w),
            value_b: g.param(self.value_b),
            gamma: g.param(self.gamma),
        }
    }
}

/// Attention over explicit graph leaves. Absent or empty references pass the
/// source through unchanged.
pub fn attend(g: &mut Graph<'_>, hs: Var, hr: Option<Var>, p: &AttentionVars) -> Result<Attended> {
    let sd = g.dims(hs);
    check_channels(sd.c)?;
    g.value(hs).ensure_finite("attention source")?;
    let hr = match hr {
        Some(hr) if g.dims(hr).numel() > 0 => hr,
        _ => {
            return Ok(Attended {
                output: hs,
                weights: None,
            })
        }
    };
    let rd = g.dims(hr);
    if rd.b != sd.b {
        return Err(Error::Dimension {
            op: "attention",
            axis: Axis::Batch.name(),
            expected: sd.b,
            found: rd.b,
        });
    }
    g.value(hr).ensure_finite("attention reference")?;

    let reduced = sd.c / REDUCTION;
    let query = g.conv3d(hs, p.source_w, p.source_b, ConvSpec::pointwise(sd.c, reduced))?;
    let key = g.conv3d(hr, p.key_w, p.key_b, ConvSpec::pointwise(rd.c, reduced))?;
    let value = g.conv3d(hr, p.value_w, p.value_b, ConvSpec::pointwise(rd.c, sd.c))?;
    // (B, N_ref, 1, 1, N_src): rows index reference positions.
    let logits = g.matmul_batched(key, query, true, false)?;
    let weights = g.softmax_axis(logits, Axis::Channel);
    let mixed = g.matmul_batched(value, weights, false, false)?;
    let mixed = g.reshape(mixed, sd)?;
    let scaled = g.scale_by(mixed, p.gamma)?;
    let output = g.add(hs, scaled)?;
    Ok(Attended {
        output,
        weights: Some(weights),
    })
}

pub fn source_reference_attention(
    g: &mut Graph<'_>,
    hs: Var,
    hr: Option<Var>,
    params: &AttentionParams,
) -> Result<Attended> {
    check_ref_channels(g, hr, params)?;
    if g.dims(hs).c != params.channels {
        return Err(Error::Dimension {
            op: "attention",
            axis: Axis::Channel.name(),
            expected: params.channels,
            found: g.dims(hs).c,
        });
    }
    let vars = params.bind(g);
    attend(g, hs, hr, &vars)
}

pub fn self_attention(g: &mut Graph<'_>, h: Var, params: &AttentionParams) -> Result<Attended> {
    source_reference_attention(g, h, Some(h), params)
}

fn check_ref_channels(g: &Graph<'_>, hr: Option<Var>, params: &AttentionParams) -> Result<()> {
    match hr {
        Some(hr) if g.dims(hr).c != params.ref_channels => Err(Error::Dimension {
            op: "attention",
            axis: Axis::Channel.name(),
            expected: params.ref_channels,
            found: g.dims(hr).c,
        }),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests;
