//! Layers of the Conv-cut architecture: patchify stem, ConvNeXt blocks,
//! downsampling, separable convolutions, self-attention, and the detail
//! extraction block that combines them.

use crate::error::{Error, Result};
use crate::ops::{self, Padding};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tape::GradTape;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;
pub const LAYER_SCALE_INIT: f64 = 1e-6;
pub const KERNEL_INIT_STD: f64 = 0.02;

fn kernel_init<S: Scalar>(dims: &[usize], rng: &mut Rng) -> Tensor<S> {
    Tensor::truncated_normal(Shape::new(dims.to_vec()).unwrap(), KERNEL_INIT_STD, rng)
        .with_requires_grad(true)
}

fn zeros_param<S: Scalar>(dims: &[usize]) -> Tensor<S> {
    Tensor::zeros(Shape::new(dims.to_vec()).unwrap()).with_requires_grad(true)
}

/// Learned per-channel normalization over the last axis.
#[derive(Debug, Clone)]
pub struct LayerNorm<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub eps: S,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(channels: usize) -> Self {
        LayerNorm {
            gamma: Tensor::ones(Shape::new(vec![channels]).unwrap()).with_requires_grad(true),
            beta: zeros_param(&[channels]),
            eps: S::from_f64(LAYER_NORM_EPS),
        }
    }

    pub fn forward(&self, tape: &mut GradTape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        ops::layer_norm(tape, x, &self.gamma, &self.beta, self.eps)
    }

    pub(crate) fn visit<'a>(
        &'a self,
        prefix: &str,
        f: &mut dyn FnMut(String, &'a Tensor<S>),
    ) {
        f(format!("{prefix}.gamma"), &self.gamma);
        f(format!("{prefix}.beta"), &self.beta);
    }

    pub(crate) fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, &mut Tensor<S>),
    ) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Depthwise k×k convolution followed by a pointwise channel mix.
#[derive(Debug, Clone)]
pub struct SeparableConv2d<S: Scalar> {
    pub depthwise: Tensor<S>, // [k, k, Cin]
    pub pointwise: Tensor<S>, // [Cin, Cout]
    pub bias: Tensor<S>,      // [Cout]
    pub stride: usize,
    pub padding: Padding,
}

impl<S: Scalar> SeparableConv2d<S> {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut Rng,
    ) -> Self {
        SeparableConv2d {
            depthwise: kernel_init(&[kernel, kernel, cin], rng),
            pointwise: kernel_init(&[cin, cout], rng),
            bias: zeros_param(&[cout]),
            stride,
            padding,
        }
    }

    pub fn forward(&self, tape: &mut GradTape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = ops::conv2d_depthwise(tape, x, &self.depthwise, self.stride, self.padding)?;
        ops::conv2d_pointwise(tape, &y, &self.pointwise, &self.bias)
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        f(format!("{prefix}.depthwise"), &self.depthwise);
        f(format!("{prefix}.pointwise"), &self.pointwise);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        f(format!("{prefix}.depthwise"), &mut self.depthwise);
        f(format!("{prefix}.pointwise"), &mut self.pointwise);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Residual ConvNeXt block: 7×7 depthwise conv, layer norm, 4× MLP with GELU,
/// and a learned per-channel scale on the branch (near-identity at init).
#[derive(Debug, Clone)]
pub struct ConvNeXtBlock<S: Scalar> {
    pub dw7: Tensor<S>, // [7, 7, C]
    pub norm: LayerNorm<S>,
    pub expand: Tensor<S>, // [C, 4C]
    pub expand_bias: Tensor<S>,
    pub project: Tensor<S>, // [4C, C]
    pub project_bias: Tensor<S>,
    pub layer_scale: Tensor<S>, // [C]
}

impl<S: Scalar> ConvNeXtBlock<S> {
    pub fn new(channels: usize, rng: &mut Rng) -> Self {
        ConvNeXtBlock {
            dw7: kernel_init(&[7, 7, channels], rng),
            norm: LayerNorm::new(channels),
            expand: kernel_init(&[channels, 4 * channels], rng),
            expand_bias: zeros_param(&[4 * channels]),
            project: kernel_init(&[4 * channels, channels], rng),
            project_bias: zeros_param(&[channels]),
            layer_scale: Tensor::full(
                Shape::new(vec![channels]).unwrap(),
                S::from_f64(LAYER_SCALE_INIT),
            )
            .with_requires_grad(true),
        }
    }

    pub fn forward(&self, tape: &mut GradTape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = ops::conv2d_depthwise(tape, x, &self.dw7, 1, Padding::Same)?;
        let y = self.norm.forward(tape, &y)?;
        let y = ops::conv2d_pointwise(tape, &y, &self.expand, &self.expand_bias)?;
        let y = ops::gelu(tape, &y)?;
        let y = ops::conv2d_pointwise(tape, &y, &self.project, &self.project_bias)?;
        let y = ops::scale_channels(tape, &y, &self.layer_scale)?;
        ops::add(tape, x, &y)
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        f(format!("{prefix}.dw7"), &self.dw7);
        self.norm.visit(&format!("{prefix}.norm"), f);
        f(format!("{prefix}.expand"), &self.expand);
        f(format!("{prefix}.expand_bias"), &self.expand_bias);
        f(format!("{prefix}.project"), &self.project);
        f(format!("{prefix}.project_bias"), &self.project_bias);
        f(format!("{prefix}.layer_scale"), &self.layer_scale);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        f(format!("{prefix}.dw7"), &mut self.dw7);
        self.norm.visit_mut(&format!("{prefix}.norm"), f);
        f(format!("{prefix}.expand"), &mut self.expand);
        f(format!("{prefix}.expand_bias"), &mut self.expand_bias);
        f(format!("{prefix}.project"), &mut self.project);
        f(format!("{prefix}.project_bias"), &mut self.project_bias);
        f(format!("{prefix}.layer_scale"), &mut self.layer_scale);
    }
}

/// Patchify stem: non-overlapping p×p patches projected to the first stage
/// width, then layer norm. Implemented as patch regrouping + pointwise conv,
/// which is exactly a p×p stride-p full convolution.
#[derive(Debug, Clone)]
pub struct Stem<S: Scalar> {
    pub patch: usize,
    pub proj: Tensor<S>, // [patch*patch*Cin, Cout]
    pub bias: Tensor<S>,
    pub norm: LayerNorm<S>,
}

impl<S: Scalar> Stem<S> {
    pub fn new(cin: usize, cout: usize, patch: usize, rng: &mut Rng) -> Self {
        Stem {
            patch,
            proj: kernel_init(&[patch * patch * cin, cout], rng),
            bias: zeros_param(&[cout]),
            norm: LayerNorm::new(cout),
        }
    }

    pub fn forward(&self, tape: &mut GradTape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let patches = ops::space_to_patches(tape, x, self.patch)?;
        let y = ops::conv2d_pointwise(tape, &patches, &self.proj, &self.bias)?;
        self.norm.forward(tape, &y)
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        f(format!("{prefix}.proj"), &self.proj);
        f(format!("{prefix}.bias"), &self.bias);
        self.norm.visit(&format!("{prefix}.norm"), f);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        f(format!("{prefix}.proj"), &mut self.proj);
        f(format!("{prefix}.bias"), &mut self.bias);
        self.norm.visit_mut(&format!("{prefix}.norm"), f);
    }
}

/// Between-stage downsample: layer norm, then a 2×2 stride-2 full convolution
/// that halves the resolution and doubles the channels.
#[derive(Debug, Clone)]
pub struct Downsample<S: Scalar> {
    pub norm: LayerNorm<S>,
    pub proj: Tensor<S>, // [4*Cin, 2*Cin]
    pub bias: Tensor<S>,
}

impl<S: Scalar> Downsample<S> {
    pub fn new(cin: usize, rng: &mut Rng) -> Self {
        Downsample {
            norm: LayerNorm::new(cin),
            proj: kernel_init(&[4 * cin, 2 * cin], rng),
            bias: zeros_param(&[2 * cin]),
        }
    }

    pub fn forward(&self, tape: &mut GradTape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let [h, w] = [x.dims()[1], x.dims()[2]];
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimension(format!(
                "downsample needs even spatial dims, got {h}x{w}"
            )));
        }
        let y = self.norm.forward(tape, x)?;
        let patches = ops::space_to_patches(tape, &y, 2)?;
        ops::conv2d_pointwise(tape, &patches, &self.proj, &self.bias)
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        self.norm.visit(&format!("{prefix}.norm"), f);
        f(format!("{prefix}.proj"), &self.proj);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.norm.visit_mut(&format!("{prefix}.norm"), f);
        f(format!("{prefix}.proj"), &mut self.proj);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Single-head scaled dot-product attention with learned Q/K/V projections:
/// softmax(QKᵀ/√d_q)·V.
#[derive(Debug, Clone)]
pub struct SelfAttentionHead<S: Scalar> {
    pub w_q: Tensor<S>, // [d_in, d_q]
    pub w_k: Tensor<S>,
    pub w_v: Tensor<S>,
    pub d_q: usize,
}

impl<S: Scalar> SelfAttentionHead<S> {
    pub fn new(d_in: usize, d_q: usize, rng: &mut Rng) -> Self {
        SelfAttentionHead {
            w_q: kernel_init(&[d_in, d_q], rng),
            w_k: kernel_init(&[d_in, d_q], rng),
            w_v: kernel_init(&[d_in, d_q], rng),
            d_q,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w_q.dims()[0]
    }

    /// Attention over one token sequence [T, d_in] -> [T, d_q].
    pub fn forward(&self, tape: &mut GradTape<S>, tokens: &Tensor<S>) -> Result<Tensor<S>> {
        ops::require_rank(tokens, 2, "attention tokens")?;
        let (t, d) = (tokens.dims()[0], tokens.dims()[1]);
        let batched = ops::reshape(tape, tokens, Shape::new(vec![1, t, d])?)?;
        let out = self.forward_batched(tape, &batched)?;
        ops::reshape(tape, &out, Shape::new(vec![t, self.d_q])?)
    }

    /// Attention applied independently per batch element: [B, T, d_in] -> [B, T, d_q].
    pub fn forward_batched(&self, tape: &mut GradTape<S>, tokens: &Tensor<S>) -> Result<Tensor<S>> {
        ops::require_rank(tokens, 3, "attention tokens")?;
        let (b, t, d) = (tokens.dims()[0], tokens.dims()[1], tokens.dims()[2]);
        if d != self.d_in() {
            return Err(Error::Dimension(format!(
                "attention expects token width {}, got {d}",
                self.d_in()
            )));
        }
        let flat = ops::reshape(tape, tokens, Shape::new(vec![b * t, d])?)?;
        let project = |tape: &mut GradTape<S>, w: &Tensor<S>| -> Result<Tensor<S>> {
            let p = ops::matmul(tape, &flat, w)?;
            ops::reshape(tape, &p, Shape::new(vec![b, t, self.d_q])?)
        };
        let q = project(tape, &self.w_q)?;
        let k = project(tape, &self.w_k)?;
        let v = project(tape, &self.w_v)?;
        let kt = ops::transpose_last2(tape, &k)?;
        let scores = ops::bmm(tape, &q, &kt)?;
        let scaled = ops::scale(tape, &scores, S::from_f64(1.0 / (self.d_q as f64).sqrt()))?;
        let attn = ops::softmax(tape, &scaled)?;
        ops::bmm(tape, &attn, &v)
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        f(format!("{prefix}.w_q"), &self.w_q);
        f(format!("{prefix}.w_k"), &self.w_k);
        f(format!("{prefix}.w_v"), &self.w_v);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        f(format!("{prefix}.w_q"), &mut self.w_q);
        f(format!("{prefix}.w_k"), &mut self.w_k);
        f(format!("{prefix}.w_v"), &mut self.w_v);
    }
}

/// Kernel/stride/padding plan for the separable conv stack. Layers one and
/// two follow the published k4s4/k2s2 valid scheme; the optional third layer
/// uses same padding so it stays defined on the 1×1 maps the second layer can
/// produce at small input sizes.
pub fn detail_conv_plan(layers: usize) -> Result<Vec<(usize, usize, Padding)>> {
    match layers {
        1 => Ok(vec![(4, 4, Padding::Valid)]),
        2 => Ok(vec![(4, 4, Padding::Valid), (2, 2, Padding::Valid)]),
        3 => Ok(vec![
            (4, 4, Padding::Valid),
            (2, 2, Padding::Valid),
            (2, 2, Padding::Same),
        ]),
        n => Err(Error::Config(format!(
            "detail extraction supports 1..=3 conv layers, got {n}"
        ))),
    }
}

/// The detail extraction block: layer norm, a stack of channel-preserving
/// separable convolutions, spatial dropout, global average pooling, then
/// self-attention over the pooled vector regrouped into channel tokens.
///
/// With `attention = None` the pooled vector itself is the feature. With
/// `token_dim` equal to the channel count the sequence has a single token,
/// which reproduces the degenerate pooled-vector-as-one-token reading.
#[derive(Debug, Clone)]
pub struct DetailExtractionBlock<S: Scalar> {
    pub norm: LayerNorm<S>,
    pub convs: Vec<SeparableConv2d<S>>,
    pub dropout_p: f64,
    pub token_dim: usize,
    pub attention: Option<SelfAttentionHead<S>>,
}

impl<S: Scalar> DetailExtractionBlock<S> {
    pub fn new(
        channels: usize,
        conv_layers: usize,
        dropout_p: f64,
        token_dim: usize,
        d_q: usize,
        with_attention: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if with_attention && !channels.is_multiple_of(token_dim) {
            return Err(Error::Config(format!(
                "channel count {channels} not divisible by token_dim {token_dim}"
            )));
        }
        let convs = detail_conv_plan(conv_layers)?
            .into_iter()
            .map(|(k, s, p)| SeparableConv2d::new(channels, channels, k, s, p, rng))
            .collect();
        Ok(DetailExtractionBlock {
            norm: LayerNorm::new(channels),
            convs,
            dropout_p,
            token_dim,
            attention: with_attention.then(|| SelfAttentionHead::new(token_dim, d_q, rng)),
        })
    }

    /// Feature width produced per batch element.
    pub fn out_features(&self, channels: usize) -> usize {
        match &self.attention {
            Some(att) => (channels / self.token_dim) * att.d_q,
            None => channels,
        }
    }

    pub fn forward(
        &self,
        tape: &mut GradTape<S>,
        x: &Tensor<S>,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Tensor<S>> {
        let mut y = self.norm.forward(tape, x)?;
        for conv in &self.convs {
            y = conv.forward(tape, &y)?;
        }
        let y = ops::spatial_dropout(tape, &y, self.dropout_p, training, rng)?;
        let pooled = ops::spatial_mean(tape, &y)?;
        attention_over_pooled(tape, &pooled, self.token_dim, self.attention.as_ref())
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        self.norm.visit(&format!("{prefix}.norm"), f);
        for (i, conv) in self.convs.iter().enumerate() {
            conv.visit(&format!("{prefix}.convs.{i}"), f);
        }
        if let Some(att) = &self.attention {
            att.visit(&format!("{prefix}.attn"), f);
        }
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.norm.visit_mut(&format!("{prefix}.norm"), f);
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_mut(&format!("{prefix}.convs.{i}"), f);
        }
        if let Some(att) = &mut self.attention {
            att.visit_mut(&format!("{prefix}.attn"), f);
        }
    }
}

/// Regroup a pooled [B, C] vector into C/token_dim tokens, run attention, and
/// flatten the result; without attention the pooled vector passes through.
pub fn attention_over_pooled<S: Scalar>(
    tape: &mut GradTape<S>,
    pooled: &Tensor<S>,
    token_dim: usize,
    attention: Option<&SelfAttentionHead<S>>,
) -> Result<Tensor<S>> {
    let Some(att) = attention else {
        return Ok(pooled.clone());
    };
    let (b, c) = (pooled.dims()[0], pooled.dims()[1]);
    if c % token_dim != 0 {
        return Err(Error::Dimension(format!(
            "pooled width {c} not divisible by token_dim {token_dim}"
        )));
    }
    let t = c / token_dim;
    let tokens = ops::reshape(tape, pooled, Shape::new(vec![b, t, token_dim])?)?;
    let mixed = att.forward_batched(tape, &tokens)?;
    ops::reshape(tape, &mixed, Shape::new(vec![b, t * att.d_q])?)
}
