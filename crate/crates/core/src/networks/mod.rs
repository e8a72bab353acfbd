//! The restoration network and the reference-based colorization network.
//!
//! Both networks are described by plain layer lists ([`Architecture`]) and
//! executed through the [`Exec`] trait, so the same forward definition drives
//! real computation on a [`Graph`] and symbolic shape planning with
//! [`ShapeExec`]. Parameters live in a [`ParamStore`] owned by
//! [`RemasterModel`] under names such as `pre.04.weight` or
//! `sr.attn8.gamma`.
//!
//! Layer map for a `T x H x W` source:
//!
//! ```text
//! restoration (pre.*)             temporal 3x3x3 convs
//!   01        64   H/2   replicate padding, stride 2
//!   02-03     128  H/2
//!   04        256  H/4   stride 2
//!   05-08     256  H/4
//!   09        128  H/2   upsample first
//!   10-11     64   H/2
//!   12        16   H      upsample first
//!   13        1    H      tanh, input added, clamped to [0, 1]
//!
//! colorization (sr.*)
//!   src/ref encoders   spatial 1x3x3: 64 s2, 128 x2, 256 s2, 256 x2, 512 s2, 512 x2  -> H/8
//!   src16              spatial: 512 s2, 512                                       -> H/16
//!   ref16              spatial: 512 s2, 512 x2                                    -> H/16
//!   attn16, post16 (temporal 512), self16
//!   attn8 on encoder outputs, mid8 (temporal 512 x2)
//!   concat with self16 upsampled to H/8 (1024 channels)
//!   fuse8 (temporal 512 x2), self8
//!   decoder temporal: 256 | up 128, 64 | up 32, 16 | up 8, 2 sigmoid
//! ```
//!
//! Every conv except the last of each network is followed by batch norm and
//! ELU. `ModelConfig::width_divisor` divides every hidden channel count,
//! which keeps the topology while making desk-scale runs affordable.

mod exec;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, AttentionParams};
use crate::error::{Error, Result};
use crate::tensor::{Activation, ConvSpec, Dims5, Graph, Mode, Padding, ParamId, ParamStore, Tensor5, Var};

pub use exec::{Exec, GraphExec, RefExec, ShapeExec};

/// Channels of the reference images (normalised Lab).
pub const REFERENCE_CHANNELS: usize = 3;
/// Spatial extents of the colorization input must be multiples of this.
pub const COLOR_MULTIPLE: usize = 16;
/// Spatial extents of the restoration input must be multiples of this.
pub const RESTORE_MULTIPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Divides every hidden channel count; 1 gives the full-size model.
    pub width_divisor: usize,
    /// Initial value of every attention `gamma`.
    pub gamma_init: f32,
    /// Seed of the weight initialisation.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width_divisor: 1,
            gamma_init: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_width_divisor(mut self, d: usize) -> Self {
        self.width_divisor = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.width_divisor;
        // Attention layers run at 512 / d channels, which must stay a multiple of 8.
        if d == 0 || 512 % (d * attention::REDUCTION) != 0 {
            return Err(Error::InvalidInput {
                op: "model config",
                reason: format!("width divisor {d} must divide 64"),
            });
        }
        if !self.gamma_init.is_finite() {
            return Err(Error::InvalidInput {
                op: "model config",
                reason: "gamma_init must be finite".into(),
            });
        }
        Ok(())
    }

    fn width(&self, channels: usize) -> usize {
        (channels / self.width_divisor).max(1)
    }
}

/// One convolution layer with its optional upsampling, normalisation and
/// activation.
#[derive(Clone, Debug)]
pub struct LayerDef {
    pub name: String,
    pub spec: ConvSpec,
    /// Doubles height and width (trilinear) before the convolution.
    pub upsample: bool,
    pub norm: bool,
    pub act: Activation,
}

impl LayerDef {
    pub fn output_dims(&self, input: Dims5) -> Dims5 {
        let input = if self.upsample {
            Dims5::new(input.b, input.c, input.t, input.h * 2, input.w * 2)
        } else {
            input
        };
        self.spec.output_dims(input)
    }
}

#[derive(Clone, Debug)]
pub struct AttentionDef {
    pub name: String,
    pub channels: usize,
    pub ref_channels: usize,
}

/// Layer lists of both networks at one width.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub config: ModelConfig,
    pub pre: Vec<LayerDef>,
    pub source_encoder: Vec<LayerDef>,
    pub reference_encoder: Vec<LayerDef>,
    pub source16: Vec<LayerDef>,
    pub reference16: Vec<LayerDef>,
    pub attn16: AttentionDef,
    pub post16: Vec<LayerDef>,
    pub self16: AttentionDef,
    pub attn8: AttentionDef,
    pub mid8: Vec<LayerDef>,
    pub fuse8: Vec<LayerDef>,
    pub self8: AttentionDef,
    pub decoder: Vec<LayerDef>,
}

struct Builder<'a> {
    cfg: &'a ModelConfig,
    prefix: &'static str,
    layers: Vec<LayerDef>,
    channels: usize,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a ModelConfig, prefix: &'static str, channels: usize) -> Self {
        Self {
            cfg,
            prefix,
            layers: Vec::new(),
            channels,
        }
    }

    fn push(&mut self, out: usize, temporal: bool, stride2: bool, upsample: bool) -> &mut LayerDef {
        let out = self.cfg.width(out);
        let spec = if temporal {
            ConvSpec::temporal(self.channels, out, stride2)
        } else {
            ConvSpec::spatial(self.channels, out, stride2)
        };
        self.channels = out;
        let name = format!("{}.{:02}", self.prefix, self.layers.len() + 1);
        self.layers.push(LayerDef {
            name,
            spec,
            upsample,
            norm: true,
            act: Activation::Elu,
        });
        self.layers.last_mut().expect("just pushed")
    }

    fn t(&mut self, out: usize) -> &mut Self {
        self.push(out, true, false, false);
        self
    }

    fn t_down(&mut self, out: usize) -> &mut Self {
        self.push(out, true, true, false);
        self
    }

    fn t_up(&mut self, out: usize) -> &mut Self {
        self.push(out, true, false, true);
        self
    }

    fn s(&mut self, out: usize) -> &mut Self {
        self.push(out, false, false, false);
        self
    }

    fn s_down(&mut self, out: usize) -> &mut Self {
        self.push(out, false, true, false);
        self
    }

    /// Replaces the last layer's width with a fixed output count, drops its
    /// normalisation and sets the output activation.
    fn output(&mut self, channels: usize, act: Activation) -> &mut Self {
        let last = self.layers.last_mut().expect("output layer");
        last.spec.out_channels = channels;
        last.norm = false;
        last.act = act;
        self.channels = channels;
        self
    }

    fn finish(&mut self) -> Vec<LayerDef> {
        std::mem::take(&mut self.layers)
    }
}

impl Architecture {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let cfg = &config;

        let mut pre = Builder::new(cfg, "pre", 1);
        pre.t_down(64);
        pre.layers[0].spec = pre.layers[0].spec.with_padding(Padding::Replicate);
        pre.t(128).t(128).t_down(256).t(256).t(256).t(256).t(256);
        pre.t_up(128).t(64).t(64).t_up(16).t(1).output(1, Activation::Tanh);

        let encoder = |prefix: &'static str, input: usize| {
            let mut b = Builder::new(cfg, prefix, input);
            b.s_down(64).s(128).s(128).s_down(256).s(256).s(256).s_down(512).s(512).s(512);
            b.finish()
        };
        let c512 = cfg.width(512);

        let mut source16 = Builder::new(cfg, "sr.src16", c512);
        source16.s_down(512).s(512);
        let mut reference16 = Builder::new(cfg, "sr.ref16", c512);
        reference16.s_down(512).s(512).s(512);
        let mut post16 = Builder::new(cfg, "sr.post16", c512);
        post16.t(512);
        let mut mid8 = Builder::new(cfg, "sr.mid8", c512);
        mid8.t(512).t(512);
        let mut fuse8 = Builder::new(cfg, "sr.fuse8", 2 * c512);
        fuse8.t(512).t(512);
        let mut decoder = Builder::new(cfg, "sr.dec", c512);
        decoder.t(256).t_up(128).t(64).t_up(32).t(16).t_up(8).t(2);
        decoder.output(2, Activation::Sigmoid);

        let attn = |name: &str| AttentionDef {
            name: format!("sr.{name}"),
            channels: c512,
            ref_channels: c512,
        };
        Ok(Self {
            config,
            pre: pre.finish(),
            source_encoder: encoder("sr.src", 1),
            reference_encoder: encoder("sr.ref", REFERENCE_CHANNELS),
            source16: source16.finish(),
            reference16: reference16.finish(),
            attn16: attn("attn16"),
            post16: post16.finish(),
            self16: attn("self16"),
            attn8: attn("attn8"),
            mid8: mid8.finish(),
            fuse8: fuse8.finish(),
            self8: attn("self8"),
            decoder: decoder.finish(),
        })
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerDef> {
        self.pre.iter().chain(self.color_layers())
    }

    fn color_layers(&self) -> impl Iterator<Item = &LayerDef> {
        [
            &self.source_encoder,
            &self.reference_encoder,
            &self.source16,
            &self.reference16,
            &self.post16,
            &self.mid8,
            &self.fuse8,
            &self.decoder,
        ]
        .into_iter()
        .flatten()
    }

    pub fn attention_layers(&self) -> [&AttentionDef; 4] {
        [&self.attn16, &self.self16, &self.attn8, &self.self8]
    }

    /// Restoration forward: `(B,1,T,H,W)` in `[0,1]` to the same shape.
    pub fn preprocess<E: Exec>(&self, e: &mut E, x: E::V) -> Result<E::V> {
        let d = e.dims(x);
        check_input("restoration input", d, 1, RESTORE_MULTIPLE)?;
        e.check_unit_range("restoration input", x)?;
        let mut h = x;
        for layer in &self.pre {
            h = e.layer(h, layer)?;
        }
        let y = e.residual_clamp(h, x)?;
        e.record("pre.out", y);
        Ok(y)
    }

    /// Colorization forward: luminance `(B,1,T,H,W)` and optional
    /// references `(B,3,N,H_r,W_r)` to chrominance `(B,2,T,H,W)`.
    pub fn colorize<E: Exec>(&self, e: &mut E, luma: E::V, refs: Option<E::V>) -> Result<E::V> {
        let d = e.dims(luma);
        check_input("colorization input", d, 1, COLOR_MULTIPLE)?;
        let refs = match refs {
            Some(r) if e.dims(r).t > 0 => {
                let rd = e.dims(r);
                check_input("reference images", rd, REFERENCE_CHANNELS, COLOR_MULTIPLE)?;
                if rd.b != d.b {
                    return Err(Error::Dimension {
                        op: "reference images",
                        axis: "batch",
                        expected: d.b,
                        found: rd.b,
                    });
                }
                Some(r)
            }
            _ => None,
        };

        let s8 = run(e, &self.source_encoder, luma)?;
        let r8 = refs.map(|r| run(e, &self.reference_encoder, r)).transpose()?;

        let s16 = run(e, &self.source16, s8)?;
        let r16 = r8.map(|r| run(e, &self.reference16, r)).transpose()?;
        let a16 = e.attention(s16, r16, &self.attn16)?;
        let a16 = run(e, &self.post16, a16)?;
        let a16 = e.attention(a16, Some(a16), &self.self16)?;

        let a8 = e.attention(s8, r8, &self.attn8)?;
        let m8 = run(e, &self.mid8, a8)?;
        let md = e.dims(m8);
        let up = e.resize(a16, [md.t, md.h, md.w])?;
        e.record("sr.up16", up);
        let cat = e.concat(m8, up)?;
        e.record("sr.concat8", cat);
        let f8 = run(e, &self.fuse8, cat)?;
        let f8 = e.attention(f8, Some(f8), &self.self8)?;

        let chroma = run(e, &self.decoder, f8)?;
        e.record("sr.out", chroma);
        Ok(chroma)
    }

    /// Symbolic `(label, dims)` of every intermediate for the given inputs.
    pub fn shape_plan(&self, source: Dims5, refs: Option<Dims5>) -> Result<Vec<(String, Dims5)>> {
        let mut e = ShapeExec::default();
        let luma = e.input(source);
        let refs = refs.map(|r| e.input(r));
        let y = self.preprocess(&mut e, luma)?;
        self.colorize(&mut e, y, refs)?;
        Ok(e.into_trace())
    }
}

fn run<E: Exec>(e: &mut E, layers: &[LayerDef], mut x: E::V) -> Result<E::V> {
    for layer in layers {
        x = e.layer(x, layer)?;
    }
    Ok(x)
}

fn check_input(op: &'static str, d: Dims5, channels: usize, multiple: usize) -> Result<()> {
    if d.c != channels {
        return Err(Error::Dimension {
            op,
            axis: "channel",
            expected: channels,
            found: d.c,
        });
    }
    for (axis, len) in [("height", d.h), ("width", d.w)] {
        if len == 0 || len % multiple != 0 {
            return Err(Error::InvalidInput {
                op,
                reason: format!("{axis} {len} is not a positive multiple of {multiple}"),
            });
        }
    }
    if d.b == 0 || d.t == 0 {
        return Err(Error::InvalidInput {
            op,
            reason: format!("empty input {d}"),
        });
    }
    Ok(())
}

/// Parameter handles of one conv layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerIds {
    pub weight: ParamId,
    pub bias: ParamId,
    pub bn: Option<BnIds>,
}

#[derive(Clone, Copy, Debug)]
pub struct BnIds {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// Architecture plus parameter handles; everything needed to run a forward
/// pass on a graph bound to a compatible [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Layout {
    pub arch: Architecture,
    layers: HashMap<String, LayerIds>,
    attention: HashMap<String, AttentionParams>,
}

impl Layout {
    pub fn layer_ids(&self, name: &str) -> Option<&LayerIds> {
        self.layers.get(name)
    }

    pub fn attention_params(&self, name: &str) -> Option<&AttentionParams> {
        self.attention.get(name)
    }

    pub fn preprocess(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        self.arch.preprocess(&mut GraphExec::new(self, g), x)
    }

    pub fn colorize(&self, g: &mut Graph<'_>, luma: Var, refs: Option<Var>) -> Result<Var> {
        self.arch.colorize(&mut GraphExec::new(self, g), luma, refs)
    }

    /// Restored luminance and predicted chrominance.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, refs: Option<Var>) -> Result<(Var, Var)> {
        let mut e = GraphExec::new(self, g);
        let luma = self.arch.preprocess(&mut e, x)?;
        let chroma = self.arch.colorize(&mut e, luma, refs)?;
        Ok((luma, chroma))
    }
}

/// Both networks with their parameters.
#[derive(Clone, Debug)]
pub struct RemasterModel {
    pub layout: Layout,
    pub params: ParamStore,
}

/// Which network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Net {
    Restore,
    Color,
}

impl Net {
    pub fn prefix(self) -> &'static str {
        match self {
            Net::Restore => "pre.",
            Net::Color => "sr.",
        }
    }
}

impl RemasterModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let arch = Architecture::new(config)?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut layers = HashMap::new();
        for layer in arch.conv_layers() {
            let spec = layer.spec;
            let weight = params.add_kaiming(format!("{}.weight", layer.name), spec.weight_dims(), &mut rng);
            let bias = params.add(format!("{}.bias", layer.name), Tensor5::zeros(spec.bias_dims()), true);
            let bn = layer.norm.then(|| {
                let d = spec.bias_dims();
                let mut add = |suffix: &str, value: f32, trainable: bool| {
                    params.add(format!("{}.bn.{suffix}", layer.name), Tensor5::full(d, value), trainable)
                };
                BnIds {
                    scale: add("scale", 1.0, true),
                    shift: add("shift", 0.0, true),
                    running_mean: add("running_mean", 0.0, false),
                    running_var: add("running_var", 1.0, false),
                }
            });
            layers.insert(layer.name.clone(), LayerIds { weight, bias, bn });
        }
        let mut attention = HashMap::new();
        for def in arch.attention_layers() {
            let p = AttentionParams::new(
                &mut params,
                &def.name,
                def.channels,
                def.ref_channels,
                config.gamma_init,
                &mut rng,
            )?;
            attention.insert(def.name.clone(), p);
        }
        Ok(Self {
            layout: Layout {
                arch,
                layers,
                attention,
            },
            params,
        })
    }

    pub fn config(&self) -> ModelConfig {
        self.layout.arch.config
    }

    pub fn arch(&self) -> &Architecture {
        &self.layout.arch
    }

    pub fn layer_ids(&self, name: &str) -> Option<&LayerIds> {
        self.layout.layer_ids(name)
    }

    /// Trainable parameter ids of one network.
    pub fn net_ids(&self, net: Net) -> Vec<ParamId> {
        self.params
            .trainable_ids()
            .into_iter()
            .filter(|&id| self.params.get(id).name.starts_with(net.prefix()))
            .collect()
    }

    pub fn graph(&self, mode: Mode) -> Graph<'_> {
        Graph::with_params(&self.params, mode)
    }

    pub fn preprocess(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        self.layout.preprocess(g, x)
    }

    pub fn colorize(&self, g: &mut Graph<'_>, luma: Var, refs: Option<Var>) -> Result<Var> {
        self.layout.colorize(g, luma, refs)
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, refs: Option<Var>) -> Result<(Var, Var)> {
        self.layout.forward(g, x, refs)
    }

    /// Evaluation-mode forward on plain tensors.
    pub fn infer(&self, x: &Tensor5, refs: Option<&Tensor5>) -> Result<(Tensor5, Tensor5)> {
        let mut g = self.graph(Mode::Eval);
        let xv = g.input(x.clone().with_requires_grad(false))?;
        let rv = refs.map(|r| g.input(r.clone().with_requires_grad(false))).transpose()?;
        let (l, c) = self.forward(&mut g, xv, rv)?;
        Ok((g.value(l).clone(), g.value(c).clone()))
    }
}
