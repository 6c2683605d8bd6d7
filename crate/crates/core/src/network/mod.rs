//! Generator variants and the conditional patch discriminator.
//!
//! Encoders stack `k=4, s=2, p=1` convolutions (LeakyReLU 0.2, then batch
//! norm) that halve the patch down to 1x1. Decoders mirror them with
//! transposed convolutions (ReLU, then batch norm), receive skip features
//! at every resolution above the bottleneck and end in a `tanh` head.
//!
//! Parameter names follow `g.<block>.<layer>.<tensor>` and
//! `d.<layer>.<tensor>`, where `<tensor>` is one of `weight`, `bias`,
//! `bn.gamma`, `bn.beta` and the running-statistic buffers `bn.mean` and
//! `bn.var`.

mod forward;

pub use forward::{
    apply_bn_updates, discriminator_forward, generator_forward, BnRecord, Forward, BN_EPS,
    BN_MOMENTUM,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gaussian, Activation, ConvGeometry, ParamStore, Role, Shape, Tensor};

/// Generator family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GeneratorKind {
    /// One encoder on the height raster.
    SingleStream,
    /// Two complete encoder-decoder streams merged before the head.
    WNet,
    /// Two encoders joined at the bottleneck, one shared decoder.
    Hybrid,
    /// Parameter-free pass-through of the height input, for pipeline tests.
    Identity,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::SingleStream => "single",
            GeneratorKind::WNet => "wnet",
            GeneratorKind::Hybrid => "hybrid",
            GeneratorKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single" => Some(GeneratorKind::SingleStream),
            "wnet" => Some(GeneratorKind::WNet),
            "hybrid" => Some(GeneratorKind::Hybrid),
            "identity" => Some(GeneratorKind::Identity),
            _ => None,
        }
    }

    /// Row label in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            GeneratorKind::SingleStream => "single-stream",
            GeneratorKind::WNet => "wnet",
            GeneratorKind::Hybrid => "hybrid",
            GeneratorKind::Identity => "identity",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorVariant {
    pub kind: GeneratorKind,
    /// Convolution layers per encoder.
    pub depth: usize,
    pub base_width: usize,
    pub dropout_rate: f64,
    /// Number of leading decoder layers with dropout.
    pub dropout_layers: usize,
}

impl GeneratorVariant {
    pub fn new(kind: GeneratorKind, depth: usize, base_width: usize) -> Self {
        GeneratorVariant {
            kind,
            depth,
            base_width,
            dropout_rate: 0.5,
            dropout_layers: 3,
        }
    }

    /// Patch edge whose encoders end at 1x1.
    pub fn patch(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 || self.depth > 12 {
            return Err(Error::Config(format!(
                "generator depth {} outside 2..=12",
                self.depth
            )));
        }
        if self.base_width == 0 {
            return Err(Error::Config("base width must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Encoder output channels at level `l`: `base * min(2^l, 8)`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_width * (1usize << level.min(3))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerOp {
    Conv,
    ConvTranspose,
}

/// One convolution with its activation, normalization and dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub op: LayerOp,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    pub dropout: f64,
    pub in_size: usize,
    pub out_size: usize,
}

impl LayerSpec {
    fn new(
        name: String,
        op: LayerOp,
        channels: (usize, usize),
        geometry: (usize, usize, usize),
        activation: Activation,
        in_size: usize,
    ) -> Result<Self> {
        let (kernel, stride, padding) = geometry;
        let geo = ConvGeometry {
            kernel,
            stride,
            padding,
        };
        let out_size = match op {
            LayerOp::Conv => geo.conv_out(in_size)?,
            LayerOp::ConvTranspose => geo.conv_transpose_out(in_size)?,
        };
        Ok(LayerSpec {
            name,
            op,
            in_channels: channels.0,
            out_channels: channels.1,
            kernel,
            stride,
            padding,
            activation,
            batch_norm: false,
            dropout: 0.0,
            in_size,
            out_size,
        })
    }

    fn with_bn(mut self, on: bool) -> Self {
        self.batch_norm = on;
        self
    }

    fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    pub fn weight_shape(&self) -> Shape {
        let k = self.kernel;
        match self.op {
            LayerOp::Conv => Shape::new(self.out_channels, self.in_channels, k, k),
            LayerOp::ConvTranspose => Shape::new(self.in_channels, self.out_channels, k, k),
        }
    }

    /// Trainable scalars: weights, biases and batch-norm affine terms.
    pub fn param_count(&self) -> usize {
        let bn = if self.batch_norm {
            2 * self.out_channels
        } else {
            0
        };
        self.weight_shape().numel() + self.out_channels + bn
    }
}

const LRELU: Activation = Activation::LeakyRelu(0.2);

fn encoder(v: &GeneratorVariant, block: &str, patch: usize) -> Result<Vec<LayerSpec>> {
    let mut size = patch;
    (0..v.depth)
        .map(|l| {
            let cin = if l == 0 { 1 } else { v.channels(l - 1) };
            let layer = LayerSpec::new(
                format!("g.{block}.{l}"),
                LayerOp::Conv,
                (cin, v.channels(l)),
                (4, 2, 1),
                LRELU,
                size,
            )?
            .with_bn(l != 0 && l + 1 != v.depth);
            size = layer.out_size;
            Ok(layer)
        })
        .collect()
}

/// Decoder whose layer `j > 0` sees its predecessor plus `streams` skip
/// tensors; `head` is the output channel count of the last layer.
fn decoder(
    v: &GeneratorVariant,
    block: &str,
    streams: usize,
    head: usize,
    head_act: Activation,
) -> Result<Vec<LayerSpec>> {
    let d = v.depth;
    let mut size = 1;
    (0..d)
        .map(|j| {
            let cin = if j == 0 {
                streams * v.channels(d - 1)
            } else {
                (streams + 1) * v.channels(d - 1 - j)
            };
            let last = j + 1 == d;
            let (cout, act) = if last {
                (head, head_act)
            } else {
                (v.channels(d - 2 - j), Activation::Relu)
            };
            let rate = if !last && j < v.dropout_layers {
                v.dropout_rate
            } else {
                0.0
            };
            let layer = LayerSpec::new(
                format!("g.{block}.{j}"),
                LayerOp::ConvTranspose,
                (cin, cout),
                (4, 2, 1),
                act,
                size,
            )?
            .with_bn(!last)
            .with_dropout(rate);
            size = layer.out_size;
            Ok(layer)
        })
        .collect()
}

/// Layer plan of a generator.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub variant: GeneratorVariant,
    pub patch: usize,
    /// Encoder on the PAN image (hybrid and W-Net).
    pub enc_pan: Vec<LayerSpec>,
    /// Encoder on the height raster.
    pub enc_dsm: Vec<LayerSpec>,
    /// Decoder of the PAN stream (W-Net only).
    pub dec_pan: Vec<LayerSpec>,
    /// Shared decoder, or the height stream's decoder for W-Net.
    pub dec: Vec<LayerSpec>,
    /// Final fusion convolution (W-Net only).
    pub fuse: Option<LayerSpec>,
}

pub fn build_generator(variant: GeneratorVariant) -> Result<NetworkSpec> {
    let patch = variant.patch();
    let mut spec = NetworkSpec {
        variant,
        patch,
        enc_pan: Vec::new(),
        enc_dsm: Vec::new(),
        dec_pan: Vec::new(),
        dec: Vec::new(),
        fuse: None,
    };
    if variant.kind == GeneratorKind::Identity {
        return Ok(spec);
    }
    variant.validate()?;
    match variant.kind {
        GeneratorKind::Hybrid => {
            spec.enc_pan = encoder(&variant, "enc1", patch)?;
            spec.enc_dsm = encoder(&variant, "enc2", patch)?;
            spec.dec = decoder(&variant, "dec", 2, 1, Activation::Tanh)?;
        }
        GeneratorKind::SingleStream => {
            spec.enc_dsm = encoder(&variant, "enc2", patch)?;
            spec.dec = decoder(&variant, "dec", 1, 1, Activation::Tanh)?;
        }
        GeneratorKind::WNet => {
            let w = variant.base_width;
            spec.enc_pan = encoder(&variant, "enc1", patch)?;
            spec.dec_pan = decoder(&variant, "dec1", 1, w, Activation::Relu)?;
            spec.enc_dsm = encoder(&variant, "enc2", patch)?;
            spec.dec = decoder(&variant, "dec2", 1, w, Activation::Relu)?;
            spec.fuse = Some(LayerSpec::new(
                "g.fuse".into(),
                LayerOp::Conv,
                (2 * w, 1),
                (3, 1, 1),
                Activation::Tanh,
                patch,
            )?);
        }
        GeneratorKind::Identity => unreachable!("handled above"),
    }
    Ok(spec)
}

impl NetworkSpec {
    /// Layers in execution order.
    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.enc_pan
            .iter()
            .chain(&self.dec_pan)
            .chain(&self.enc_dsm)
            .chain(&self.dec)
            .chain(self.fuse.as_ref())
    }

    /// Encoder feature maps fed forward to a decoder.
    pub fn skip_count(&self) -> usize {
        let levels = self.variant.depth.saturating_sub(1);
        match self.variant.kind {
            GeneratorKind::Hybrid | GeneratorKind::WNet => 2 * levels,
            GeneratorKind::SingleStream => levels,
            GeneratorKind::Identity => 0,
        }
    }

    pub fn uses_pan(&self) -> bool {
        !self.enc_pan.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(LayerSpec::param_count).sum()
    }

    /// Channel and spatial extent of the encoder output fed to the decoder.
    pub fn bottleneck(&self) -> Option<(usize, usize)> {
        let last = self.enc_dsm.last()?;
        let streams = if self.variant.kind == GeneratorKind::Hybrid {
            2
        } else {
            1
        };
        Some((streams * last.out_channels, last.out_size))
    }

    /// Shape pass over a `1 x 1 x patch x patch` input without evaluating
    /// any layer; returns every layer's output shape.
    pub fn dry_run(&self, patch: usize) -> Result<Vec<(String, Shape)>> {
        if patch != self.patch && self.variant.kind != GeneratorKind::Identity {
            return Err(Error::Config(format!(
                "patch {patch} does not match depth {} (patch {})",
                self.variant.depth, self.patch
            )));
        }
        let mut out = Vec::new();
        let run_encoder =
            |layers: &[LayerSpec], out: &mut Vec<(String, Shape)>| -> Result<Vec<Shape>> {
                let mut s = Shape::new(1, 1, patch, patch);
                let mut feats = Vec::new();
                for l in layers {
                    s = layer_shape(l, s)?;
                    out.push((l.name.clone(), s));
                    feats.push(s);
                }
                Ok(feats)
            };
        let run_decoder = |layers: &[LayerSpec],
                           skips: &[&[Shape]],
                           start: Shape,
                           out: &mut Vec<(String, Shape)>|
         -> Result<Shape> {
            let d = layers.len();
            let mut s = start;
            for (j, l) in layers.iter().enumerate() {
                if j > 0 {
                    for feats in skips {
                        s = concat_shape(s, feats[d - 1 - j])?;
                    }
                }
                s = layer_shape(l, s)?;
                out.push((l.name.clone(), s));
            }
            Ok(s)
        };
        match self.variant.kind {
            GeneratorKind::Identity => {
                out.push(("identity".into(), Shape::new(1, 1, patch, patch)))
            }
            GeneratorKind::SingleStream => {
                let f = run_encoder(&self.enc_dsm, &mut out)?;
                run_decoder(&self.dec, &[&f], f[f.len() - 1], &mut out)?;
            }
            GeneratorKind::Hybrid => {
                let f1 = run_encoder(&self.enc_pan, &mut out)?;
                let f2 = run_encoder(&self.enc_dsm, &mut out)?;
                let b = concat_shape(f1[f1.len() - 1], f2[f2.len() - 1])?;
                run_decoder(&self.dec, &[&f1, &f2], b, &mut out)?;
            }
            GeneratorKind::WNet => {
                let f1 = run_encoder(&self.enc_pan, &mut out)?;
                let s1 = run_decoder(&self.dec_pan, &[&f1], f1[f1.len() - 1], &mut out)?;
                let f2 = run_encoder(&self.enc_dsm, &mut out)?;
                let s2 = run_decoder(&self.dec, &[&f2], f2[f2.len() - 1], &mut out)?;
                let fuse = self.fuse.as_ref().expect("wnet has a fusion layer");
                let s = layer_shape(fuse, concat_shape(s1, s2)?)?;
                out.push((fuse.name.clone(), s));
            }
        }
        Ok(out)
    }
}

fn concat_shape(a: Shape, b: Shape) -> Result<Shape> {
    if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
        return Err(Error::Shape(format!("cannot concatenate {a} with {b}")));
    }
    Ok(Shape::new(a.n, a.c + b.c, a.h, a.w))
}

fn layer_shape(l: &LayerSpec, s: Shape) -> Result<Shape> {
    if s.c != l.in_channels || s.h != l.in_size || s.w != l.in_size {
        return Err(Error::Shape(format!(
            "layer {} expects {}x{}x{} but receives {s}",
            l.name, l.in_channels, l.in_size, l.in_size
        )));
    }
    let geo = ConvGeometry {
        kernel: l.kernel,
        stride: l.stride,
        padding: l.padding,
    };
    let h = match l.op {
        LayerOp::Conv => geo.conv_out(s.h)?,
        LayerOp::ConvTranspose => geo.conv_transpose_out(s.h)?,
    };
    Ok(Shape::new(s.n, l.out_channels, h, h))
}

/// Conditional patch discriminator: five halving convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorSpec {
    pub base_width: usize,
    /// Also condition on the PAN image.
    pub condition_on_pan: bool,
    pub patch: usize,
    pub layers: Vec<LayerSpec>,
}

pub fn build_discriminator(
    base_width: usize,
    condition_on_pan: bool,
    patch: usize,
) -> Result<DiscriminatorSpec> {
    if base_width == 0 {
        return Err(Error::Config(
            "discriminator width must be at least 1".into(),
        ));
    }
    if patch < 32 || !patch.is_multiple_of(32) {
        return Err(Error::Config(format!(
            "discriminator needs a patch divisible by 32, got {patch}"
        )));
    }
    let widths = [
        base_width,
        2 * base_width,
        4 * base_width,
        8 * base_width,
        1,
    ];
    let mut cin = if condition_on_pan { 3 } else { 2 };
    let mut size = patch;
    let mut layers = Vec::with_capacity(5);
    for (l, &cout) in widths.iter().enumerate() {
        let act = if l == 4 { Activation::Sigmoid } else { LRELU };
        let layer = LayerSpec::new(
            format!("d.{l}"),
            LayerOp::Conv,
            (cin, cout),
            (4, 2, 1),
            act,
            size,
        )?
        .with_bn(l > 0 && l < 4);
        cin = cout;
        size = layer.out_size;
        layers.push(layer);
    }
    Ok(DiscriminatorSpec {
        base_width,
        condition_on_pan,
        patch,
        layers,
    })
}

impl DiscriminatorSpec {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Edge of the score map.
    pub fn score_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_size)
    }
}

/// Weight standard deviation and batch-norm scale spread at initialization.
pub const INIT_STD: f64 = 0.02;

/// Adds every layer's tensors to `store`: Gaussian weights, zero biases,
/// batch-norm scales around one and unit running variances.
pub fn init_layers<'a, T: Scalar, R: Rng + ?Sized>(
    layers: impl IntoIterator<Item = &'a LayerSpec>,
    store: &mut ParamStore<T>,
    rng: &mut R,
) -> Result<()> {
    for l in layers {
        store.insert(
            format!("{}.weight", l.name),
            gaussian(l.weight_shape(), 0.0, INIT_STD, rng),
            Role::Trainable,
        )?;
        let c = Shape::new(l.out_channels, 1, 1, 1);
        store.insert(
            format!("{}.bias", l.name),
            Tensor::zeros(c),
            Role::Trainable,
        )?;
        if l.batch_norm {
            store.insert(
                format!("{}.bn.gamma", l.name),
                gaussian(c, 1.0, INIT_STD, rng),
                Role::Trainable,
            )?;
            store.insert(
                format!("{}.bn.beta", l.name),
                Tensor::zeros(c),
                Role::Trainable,
            )?;
            store.insert(
                format!("{}.bn.mean", l.name),
                Tensor::zeros(c),
                Role::Buffer,
            )?;
            store.insert(
                format!("{}.bn.var", l.name),
                Tensor::full(c, T::one()),
                Role::Buffer,
            )?;
        }
    }
    Ok(())
}

pub fn init_generator<T: Scalar, R: Rng + ?Sized>(
    spec: &NetworkSpec,
    rng: &mut R,
) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    init_layers(spec.layers(), &mut store, rng)?;
    Ok(store)
}

pub fn init_discriminator<T: Scalar, R: Rng + ?Sized>(
    spec: &DiscriminatorSpec,
    rng: &mut R,
) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    init_layers(&spec.layers, &mut store, rng)?;
    Ok(store)
}
