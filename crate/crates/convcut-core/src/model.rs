//! The assembled Conv-cut network: patchify stem, the retained ConvNeXt
//! stages, detail extraction (or a plain pooled feature), and a linear
//! classifier head. Also parameter naming/freezing and Grad-CAM.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::nn::{
    attention_over_pooled, ConvNeXtBlock, DetailExtractionBlock, Downsample, SelfAttentionHead,
    Stem,
};
use crate::ops;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tape::GradTape;
use crate::tensor::Tensor;

/// Everything needed to build a Conv-cut model. `retained_stages` counts how
/// many ConvNeXt stages survive the truncation (default 2: stages three and
/// four are cut).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvCutConfig {
    pub retained_stages: usize,
    pub stage_widths: Vec<usize>,
    pub stage_depths: Vec<usize>,
    pub num_classes: usize,
    pub dropout_p: f64,
    pub token_dim: usize,
    pub d_q: usize,
    pub freeze_backbone: bool,
    pub enable_attention: bool,
    pub enable_detail_extraction: bool,
    pub det_conv_layers: usize,
}

impl ConvCutConfig {
    /// ConvNeXt-Base geometry (what the paper builds on), truncated to two
    /// stages, with the 7-class head used for RAF-DB.
    pub fn base() -> Self {
        ConvCutConfig {
            retained_stages: 2,
            stage_widths: vec![128, 256, 512, 1024],
            stage_depths: vec![3, 3, 27, 3],
            num_classes: 7,
            dropout_p: 0.1,
            token_dim: 16,
            d_q: 16,
            freeze_backbone: false,
            enable_attention: true,
            enable_detail_extraction: true,
            det_conv_layers: 2,
        }
    }

    /// Desk-scale profile: widths 16/32, one block per stage, 64×64 inputs.
    /// Trains in seconds; used by the verification suites.
    pub fn tiny() -> Self {
        ConvCutConfig {
            retained_stages: 2,
            stage_widths: vec![16, 32],
            stage_depths: vec![1, 1],
            num_classes: 2,
            dropout_p: 0.1,
            token_dim: 8,
            d_q: 8,
            freeze_backbone: false,
            enable_attention: true,
            enable_detail_extraction: true,
            det_conv_layers: 2,
        }
    }

    /// Channel count coming out of the backbone.
    pub fn backbone_channels(&self) -> usize {
        self.stage_widths[self.retained_stages - 1]
    }

    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if !(1..=3).contains(&self.retained_stages) {
            violations.push(format!(
                "retained_stages must be 1..=3, got {}",
                self.retained_stages
            ));
        }
        if self.retained_stages > self.stage_widths.len() {
            violations.push(format!(
                "retained_stages {} exceeds the {} configured stage widths",
                self.retained_stages,
                self.stage_widths.len()
            ));
        }
        if self.stage_depths.len() < self.retained_stages.min(self.stage_widths.len()) {
            violations.push(format!(
                "need a depth for each retained stage, got {} depths",
                self.stage_depths.len()
            ));
        }
        if self.num_classes < 2 {
            violations.push(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            violations.push(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        if self.token_dim == 0 {
            violations.push("token_dim must be >= 1".into());
        }
        if self.d_q == 0 {
            violations.push("d_q must be >= 1".into());
        }
        if !(1..=3).contains(&self.det_conv_layers) {
            violations.push(format!(
                "det_conv_layers must be 1..=3, got {}",
                self.det_conv_layers
            ));
        }
        if self.retained_stages <= 3
            && self.retained_stages >= 1
            && self.retained_stages <= self.stage_widths.len()
            && self.enable_attention
            && self.token_dim != 0
            && !self.backbone_channels().is_multiple_of(self.token_dim)
        {
            violations.push(format!(
                "backbone channels {} not divisible by token_dim {}",
                self.backbone_channels(),
                self.token_dim
            ));
        }
        for (i, &w) in self.stage_widths.iter().enumerate() {
            if w == 0 {
                violations.push(format!("stage_widths[{i}] must be >= 1"));
            }
        }
        for (i, &d) in self.stage_depths.iter().enumerate() {
            if d == 0 {
                violations.push(format!("stage_depths[{i}] must be >= 1"));
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(violations.join("; ")))
        }
    }

    /// Feature width reaching the classifier head.
    pub fn feature_width(&self) -> usize {
        let c = self.backbone_channels();
        if self.enable_attention {
            (c / self.token_dim) * self.d_q
        } else {
            c
        }
    }
}

/// One retained stage: an optional downsample in front (stages after the
/// first), then a run of residual blocks.
#[derive(Debug, Clone)]
pub struct Stage<S: Scalar> {
    pub downsample: Option<Downsample<S>>,
    pub blocks: Vec<ConvNeXtBlock<S>>,
}

#[derive(Debug, Clone)]
pub struct ConvCutModel<S: Scalar> {
    pub config: ConvCutConfig,
    pub stem: Stem<S>,
    pub stages: Vec<Stage<S>>,
    /// Detail extraction path; absent when disabled in the config.
    pub det: Option<DetailExtractionBlock<S>>,
    /// Attention over the pooled backbone output, for the
    /// attention-without-detail-extraction ablation row.
    pub pool_attention: Option<SelfAttentionHead<S>>,
    pub head_weight: Tensor<S>, // [F, num_classes]
    pub head_bias: Tensor<S>,
    frozen: BTreeSet<String>,
}

/// Activations captured by a forward pass, for shape checks and Grad-CAM.
pub struct ForwardTrace<S: Scalar> {
    pub logits: Tensor<S>,
    pub activations: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> ForwardTrace<S> {
    pub fn activation(&self, name: &str) -> Result<&Tensor<S>> {
        self.activations
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| {
                let known: Vec<&str> = self.activations.iter().map(|(n, _)| n.as_str()).collect();
                Error::Lookup(format!(
                    "no activation named `{name}`; captured: {}",
                    known.join(", ")
                ))
            })
    }
}

/// Build a model with freshly initialized parameters; deterministic per seed.
pub fn build_model<S: Scalar>(cfg: &ConvCutConfig, rng: &mut Rng) -> Result<ConvCutModel<S>> {
    cfg.validate()?;
    let stem = Stem::new(3, cfg.stage_widths[0], 4, rng);
    let mut stages = Vec::with_capacity(cfg.retained_stages);
    for si in 0..cfg.retained_stages {
        let downsample = (si > 0).then(|| Downsample::new(cfg.stage_widths[si - 1], rng));
        let blocks = (0..cfg.stage_depths[si])
            .map(|_| ConvNeXtBlock::new(cfg.stage_widths[si], rng))
            .collect();
        stages.push(Stage { downsample, blocks });
    }
    let c = cfg.backbone_channels();
    let det = if cfg.enable_detail_extraction {
        Some(DetailExtractionBlock::new(
            c,
            cfg.det_conv_layers,
            cfg.dropout_p,
            cfg.token_dim,
            cfg.d_q,
            cfg.enable_attention,
            rng,
        )?)
    } else {
        None
    };
    let pool_attention = (!cfg.enable_detail_extraction && cfg.enable_attention)
        .then(|| SelfAttentionHead::new(cfg.token_dim, cfg.d_q, rng));
    let f = cfg.feature_width();
    let head_weight = Tensor::truncated_normal(
        Shape::new(vec![f, cfg.num_classes])?,
        crate::nn::KERNEL_INIT_STD,
        rng,
    )
    .with_requires_grad(true);
    let head_bias = Tensor::zeros(Shape::new(vec![cfg.num_classes])?).with_requires_grad(true);

    let mut model = ConvCutModel {
        config: cfg.clone(),
        stem,
        stages,
        det,
        pool_attention,
        head_weight,
        head_bias,
        frozen: BTreeSet::new(),
    };
    if cfg.freeze_backbone {
        model.set_backbone_frozen(true);
    }
    Ok(model)
}

impl<S: Scalar> ConvCutModel<S> {
    /// Forward pass to logits [B, num_classes].
    pub fn forward(
        &self,
        tape: &mut GradTape<S>,
        x: &Tensor<S>,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Tensor<S>> {
        Ok(self.forward_traced(tape, x, training, rng)?.logits)
    }

    /// Forward pass that also captures the named activations
    /// (`stem`, `stage1`..`stageN`, detail-extraction intermediates, `features`).
    pub fn forward_traced(
        &self,
        tape: &mut GradTape<S>,
        x: &Tensor<S>,
        training: bool,
        rng: &mut Rng,
    ) -> Result<ForwardTrace<S>> {
        let mut acts: Vec<(String, Tensor<S>)> = Vec::new();
        let layer_err = |layer: &str, e: Error| match e {
            Error::Dimension(msg) => Error::Dimension(format!("{layer}: {msg}")),
            other => other,
        };

        let mut y = self
            .stem
            .forward(tape, x)
            .map_err(|e| layer_err("stem", e))?;
        acts.push(("stem".into(), y.clone()));
        for (si, stage) in self.stages.iter().enumerate() {
            let name = format!("stage{}", si + 1);
            if let Some(ds) = &stage.downsample {
                y = ds
                    .forward(tape, &y)
                    .map_err(|e| layer_err(&format!("{name}.downsample"), e))?;
            }
            for (bi, block) in stage.blocks.iter().enumerate() {
                y = block
                    .forward(tape, &y)
                    .map_err(|e| layer_err(&format!("{name}.block{bi}"), e))?;
            }
            acts.push((name, y.clone()));
        }

        let features = match (&self.det, &self.pool_attention) {
            (Some(det), _) => {
                let mut z = det
                    .norm
                    .forward(tape, &y)
                    .map_err(|e| layer_err("det.norm", e))?;
                for (ci, conv) in det.convs.iter().enumerate() {
                    z = conv
                        .forward(tape, &z)
                        .map_err(|e| layer_err(&format!("det.conv{ci}"), e))?;
                    acts.push((format!("det.conv{ci}"), z.clone()));
                }
                let z = ops::spatial_dropout(tape, &z, det.dropout_p, training, rng)?;
                let pooled = ops::spatial_mean(tape, &z)?;
                acts.push(("det.pooled".into(), pooled.clone()));
                attention_over_pooled(tape, &pooled, det.token_dim, det.attention.as_ref())
                    .map_err(|e| layer_err("det.attention", e))?
            }
            (None, Some(att)) => {
                let pooled = ops::spatial_mean(tape, &y)?;
                acts.push(("pooled".into(), pooled.clone()));
                attention_over_pooled(tape, &pooled, self.config.token_dim, Some(att))
                    .map_err(|e| layer_err("pool_attention", e))?
            }
            (None, None) => {
                let pooled = ops::spatial_mean(tape, &y)?;
                acts.push(("pooled".into(), pooled.clone()));
                pooled
            }
        };
        acts.push(("features".into(), features.clone()));

        let logits = linear(tape, &features, &self.head_weight, &self.head_bias)
            .map_err(|e| layer_err("head", e))?;
        Ok(ForwardTrace {
            logits,
            activations: acts,
        })
    }

    /// Name of the last retained backbone stage (the Grad-CAM default target).
    pub fn backbone_output_name(&self) -> String {
        format!("stage{}", self.stages.len())
    }

    pub fn for_each_param<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        self.stem.visit("stem", f);
        for (si, stage) in self.stages.iter().enumerate() {
            let prefix = format!("stages.{si}");
            if let Some(ds) = &stage.downsample {
                ds.visit(&format!("{prefix}.downsample"), f);
            }
            for (bi, block) in stage.blocks.iter().enumerate() {
                block.visit(&format!("{prefix}.blocks.{bi}"), f);
            }
        }
        if let Some(det) = &self.det {
            det.visit("det", f);
        }
        if let Some(att) = &self.pool_attention {
            att.visit("pool_attn", f);
        }
        f("head.weight".into(), &self.head_weight);
        f("head.bias".into(), &self.head_bias);
    }

    pub fn for_each_param_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor<S>)) {
        self.stem.visit_mut("stem", f);
        for (si, stage) in self.stages.iter_mut().enumerate() {
            let prefix = format!("stages.{si}");
            if let Some(ds) = &mut stage.downsample {
                ds.visit_mut(&format!("{prefix}.downsample"), f);
            }
            for (bi, block) in stage.blocks.iter_mut().enumerate() {
                block.visit_mut(&format!("{prefix}.blocks.{bi}"), f);
            }
        }
        if let Some(det) = &mut self.det {
            det.visit_mut("det", f);
        }
        if let Some(att) = &mut self.pool_attention {
            att.visit_mut("pool_attn", f);
        }
        f("head.weight".into(), &mut self.head_weight);
        f("head.bias".into(), &mut self.head_bias);
    }

    /// Named parameters in traversal order (clones share data and identity).
    pub fn named_params(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        self.for_each_param(&mut |name, t| out.push((name, t.clone())));
        out
    }

    /// Total trainable-or-not parameter element count.
    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, t| n += t.numel());
        n
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn frozen_names(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    /// Parameter names the optimizer may update.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each_param(&mut |name, _| {
            if !self.frozen.contains(&name) {
                out.push(name);
            }
        });
        out
    }

    fn backbone_param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each_param(&mut |name, _| {
            if name.starts_with("stem.") || name.starts_with("stages.") {
                out.push(name);
            }
        });
        out
    }

    /// Freeze or unfreeze the stem and stage parameters. Detail extraction
    /// and the head stay trainable either way.
    pub fn set_backbone_frozen(&mut self, frozen: bool) {
        let names = self.backbone_param_names();
        if frozen {
            self.frozen.extend(names);
        } else {
            for name in names {
                self.frozen.remove(&name);
            }
        }
        self.config.freeze_backbone = frozen;
    }
}

/// Fully connected layer on [B, F] features, via the pointwise conv kernel on
/// a 1×1 spatial map.
pub fn linear<S: Scalar>(
    tape: &mut GradTape<S>,
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (b, f) = (x.dims()[0], x.dims()[1]);
    let as_map = ops::reshape(tape, x, Shape::new(vec![b, 1, 1, f])?)?;
    let y = ops::conv2d_pointwise(tape, &as_map, weight, bias)?;
    ops::reshape(tape, &y, Shape::new(vec![b, weight.dims()[1]])?)
}

/// Gradient-weighted class activation map. Runs an eval-mode forward with the
/// input marked as a gradient source, backpropagates the raw class logit, and
/// combines the target activation's channels weighted by their spatially
/// averaged gradients. The heatmap is ReLU'd and scaled to [0, 1] by its max
/// (an all-zero map stays zero).
#[allow(clippy::needless_range_loop)]
pub fn grad_cam<S: Scalar>(
    model: &ConvCutModel<S>,
    x: &Tensor<S>,
    class_idx: usize,
    target_layer: Option<&str>,
) -> Result<Tensor<S>> {
    if x.rank() != 4 || x.dims()[0] != 1 {
        return Err(Error::Dimension(format!(
            "grad_cam expects one [1,H,W,3] image, got {}",
            x.shape()
        )));
    }
    if class_idx >= model.config.num_classes {
        return Err(Error::Contract(format!(
            "class index {class_idx} out of range for {} classes",
            model.config.num_classes
        )));
    }
    let default_layer = model.backbone_output_name();
    let layer = target_layer.unwrap_or(&default_layer);

    let mut tape = GradTape::new();
    let mut rng = Rng::new(0); // eval mode: never consulted
    let x = x.clone().with_requires_grad(true);
    let trace = model.forward_traced(&mut tape, &x, false, &mut rng)?;
    let activation = trace.activation(layer)?;
    if activation.rank() != 4 {
        return Err(Error::Lookup(format!(
            "target layer `{layer}` is not a 4-D activation (shape {})",
            activation.shape()
        )));
    }
    let logit = ops::take_index(&mut tape, &trace.logits, class_idx)?;
    let grads = tape.backward(&logit)?;

    let [_, h, w, c] = [
        activation.dims()[0],
        activation.dims()[1],
        activation.dims()[2],
        activation.dims()[3],
    ];
    let mut cam = vec![0.0f64; h * w];
    if let Some(dact) = grads.get(activation) {
        // channel weights: spatial mean of the gradient
        let mut alpha = vec![0.0f64; c];
        for p in 0..h * w {
            for ch in 0..c {
                alpha[ch] += dact.data()[p * c + ch].as_f64();
            }
        }
        for a in alpha.iter_mut() {
            *a /= (h * w) as f64;
        }
        for p in 0..h * w {
            let mut v = 0.0;
            for ch in 0..c {
                v += alpha[ch] * activation.data()[p * c + ch].as_f64();
            }
            cam[p] = v.max(0.0);
        }
        let max = cam.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            for v in cam.iter_mut() {
                *v /= max;
            }
        }
    }
    Tensor::from_vec(
        Shape::new(vec![h, w])?,
        cam.into_iter().map(S::from_f64).collect(),
    )
}
