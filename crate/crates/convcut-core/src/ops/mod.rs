//! Differentiable tensor operations. Each op validates shapes, computes the
//! forward value (reductions accumulate in f64), and — when the tape is
//! recording and an input requires a gradient — pushes a [`Rule`] holding
//! exactly the state its backward pass needs.

mod activation;
mod basic;
mod conv;
mod linalg;
mod norm;
mod reduce;

pub use activation::{gelu, log_softmax, softmax};
pub use basic::{add, reshape, scale, scale_channels, spatial_dropout};
pub use conv::{conv2d_depthwise, conv2d_pointwise, space_to_patches, Padding};
pub use linalg::{bmm, matmul, transpose_last2};
pub use norm::layer_norm;
pub use reduce::{nll_mean, spatial_mean, take_index, weighted_sum};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tape::GradTape;
use crate::tensor::Tensor;

/// Saved context for one recorded op. `backward` maps the output gradient to
/// per-input gradients, aligned with the op's recorded input order; `None`
/// where the input does not need a gradient.
pub(crate) enum Rule<S: Scalar> {
    Add,
    Scale {
        factor: S,
    },
    ScaleChannels {
        x: Tensor<S>,
        scales: Tensor<S>,
    },
    Reshape,
    SpatialDropout {
        // one keep/scale factor per (batch, channel) plane
        plane_mask: Vec<S>,
        dims: [usize; 4],
    },
    Matmul {
        a: Tensor<S>,
        b: Tensor<S>,
    },
    Bmm {
        a: Tensor<S>,
        b: Tensor<S>,
    },
    TransposeLast2 {
        // input is [batch.., rows, cols]
        batch: usize,
        rows: usize,
        cols: usize,
    },
    Softmax {
        y: Tensor<S>,
    },
    LogSoftmax {
        y: Tensor<S>,
    },
    Gelu {
        x: Tensor<S>,
    },
    LayerNorm {
        x: Tensor<S>,
        gamma: Tensor<S>,
        eps: S,
    },
    DepthwiseConv {
        x: Tensor<S>,
        kernel: Tensor<S>,
        stride: usize,
        padding: Padding,
    },
    PointwiseConv {
        x: Tensor<S>,
        kernel: Tensor<S>,
    },
    SpaceToPatches {
        in_dims: [usize; 4],
        patch: usize,
    },
    SpatialMean {
        in_dims: [usize; 4],
    },
    WeightedSum {
        weights: Tensor<S>,
    },
    TakeIndex {
        index: usize,
        numel: usize,
    },
    NllMean {
        labels: Vec<usize>,
        num_classes: usize,
    },
}

/// Per-input gradient buffers; indices follow the recorded input order.
pub(crate) type InputGrads<S> = Vec<Option<Vec<S>>>;

impl<S: Scalar> Rule<S> {
    pub(crate) fn backward(&self, dy: &[S], needs: &[bool]) -> Result<InputGrads<S>> {
        match self {
            Rule::Add => Ok(vec![
                needs[0].then(|| dy.to_vec()),
                needs[1].then(|| dy.to_vec()),
            ]),
            Rule::Scale { factor } => Ok(vec![
                needs[0].then(|| dy.iter().map(|&g| g * *factor).collect())
            ]),
            Rule::ScaleChannels { x, scales } => basic::scale_channels_backward(x, scales, dy, needs),
            Rule::Reshape => Ok(vec![needs[0].then(|| dy.to_vec())]),
            Rule::SpatialDropout { plane_mask, dims } => {
                basic::spatial_dropout_backward(plane_mask, *dims, dy, needs)
            }
            Rule::Matmul { a, b } => linalg::matmul_backward(a, b, dy, needs),
            Rule::Bmm { a, b } => linalg::bmm_backward(a, b, dy, needs),
            Rule::TransposeLast2 { batch, rows, cols } => {
                Ok(vec![needs[0]
                    .then(|| linalg::transpose_buffer(dy, *batch, *cols, *rows))])
            }
            Rule::Softmax { y } => activation::softmax_backward(y, dy, needs),
            Rule::LogSoftmax { y } => activation::log_softmax_backward(y, dy, needs),
            Rule::Gelu { x } => activation::gelu_backward(x, dy, needs),
            Rule::LayerNorm { x, gamma, eps } => norm::layer_norm_backward(x, gamma, *eps, dy, needs),
            Rule::DepthwiseConv {
                x,
                kernel,
                stride,
                padding,
            } => conv::depthwise_backward(x, kernel, *stride, *padding, dy, needs),
            Rule::PointwiseConv { x, kernel } => conv::pointwise_backward(x, kernel, dy, needs),
            Rule::SpaceToPatches { in_dims, patch } => {
                conv::space_to_patches_backward(*in_dims, *patch, dy, needs)
            }
            Rule::SpatialMean { in_dims } => reduce::spatial_mean_backward(*in_dims, dy, needs),
            Rule::WeightedSum { weights } => Ok(vec![
                needs[0].then(|| weights.data().iter().map(|&w| w * dy[0]).collect())
            ]),
            Rule::TakeIndex { index, numel } => {
                reduce::take_index_backward(*index, *numel, dy, needs)
            }
            Rule::NllMean {
                labels,
                num_classes,
            } => reduce::nll_mean_backward(labels, *num_classes, dy, needs),
        }
    }
}

/// Finish an op: reject non-finite outputs, then record the node if the tape
/// is live and some input participates in differentiation. The rule is built
/// lazily so inference pays nothing for it.
pub(crate) fn emit<S: Scalar>(
    tape: &mut GradTape<S>,
    name: &'static str,
    inputs: &[&Tensor<S>],
    out: Tensor<S>,
    rule: impl FnOnce() -> Rule<S>,
) -> Result<Tensor<S>> {
    if !out.is_finite() {
        return Err(Error::NonFinite(name));
    }
    if tape.is_active() && inputs.iter().any(|t| t.requires_grad()) {
        let out = out.with_requires_grad(true);
        tape.push(name, inputs, &out, rule());
        Ok(out)
    } else {
        Ok(out)
    }
}

pub(crate) fn require_rank<S: Scalar>(t: &Tensor<S>, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::Dimension(format!(
            "{what} must be rank {rank}, got shape {}",
            t.shape()
        )));
    }
    Ok(())
}

pub(crate) fn store<S: Scalar>(shape: Shape, acc: Vec<f64>) -> Result<Tensor<S>> {
    Tensor::from_vec(shape, acc.into_iter().map(S::from_f64).collect())
}
