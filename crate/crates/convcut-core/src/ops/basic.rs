use super::{emit, require_rank, InputGrads, Rule};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tape::GradTape;
use crate::tensor::Tensor;

/// Elementwise sum of two same-shape tensors.
pub fn add<S: Scalar>(tape: &mut GradTape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "add shapes disagree: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let data: Vec<S> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    let out = Tensor::from_vec(a.shape().clone(), data)?;
    emit(tape, "add", &[a, b], out, || Rule::Add)
}

/// Multiply every element by a constant.
pub fn scale<S: Scalar>(tape: &mut GradTape<S>, x: &Tensor<S>, factor: S) -> Result<Tensor<S>> {
    let data: Vec<S> = x.data().iter().map(|&v| v * factor).collect();
    let out = Tensor::from_vec(x.shape().clone(), data)?;
    emit(tape, "scale", &[x], out, || Rule::Scale { factor })
}

/// Per-channel multiply: [B,H,W,C] ⊙ scales[C] (the layer-scale of a block).
pub fn scale_channels<S: Scalar>(
    tape: &mut GradTape<S>,
    x: &Tensor<S>,
    scales: &Tensor<S>,
) -> Result<Tensor<S>> {
    require_rank(x, 4, "scale_channels input")?;
    require_rank(scales, 1, "scale_channels scales")?;
    let c = x.shape().last_dim();
    if scales.dims()[0] != c {
        return Err(Error::Dimension(format!(
            "scale_channels expects {c} scales, got {}",
            scales.dims()[0]
        )));
    }
    let sd = scales.data();
    let data: Vec<S> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * sd[i % c])
        .collect();
    let out = Tensor::from_vec(x.shape().clone(), data)?;
    emit(tape, "scale_channels", &[x, scales], out, || {
        Rule::ScaleChannels {
            x: x.clone(),
            scales: scales.clone(),
        }
    })
}

pub(super) fn scale_channels_backward<S: Scalar>(
    x: &Tensor<S>,
    scales: &Tensor<S>,
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    let c = scales.dims()[0];
    let sd = scales.data();
    let dx = needs[0].then(|| {
        dy.iter()
            .enumerate()
            .map(|(i, &g)| g * sd[i % c])
            .collect()
    });
    let ds = needs[1].then(|| {
        let mut acc = vec![0.0f64; c];
        for (i, (&g, &v)) in dy.iter().zip(x.data()).enumerate() {
            acc[i % c] += g.as_f64() * v.as_f64();
        }
        acc.into_iter().map(S::from_f64).collect()
    });
    Ok(vec![dx, ds])
}

/// Same data, new shape of equal element count; the gradient reshapes back.
pub fn reshape<S: Scalar>(
    tape: &mut GradTape<S>,
    x: &Tensor<S>,
    shape: Shape,
) -> Result<Tensor<S>> {
    let out = x.reshaped(shape)?.with_requires_grad(false);
    emit(tape, "reshape", &[x], out, || Rule::Reshape)
}

/// Inverted spatial dropout: in training, each (batch, channel) plane of a
/// [B,H,W,C] tensor is zeroed with probability p and survivors are scaled by
/// 1/(1-p); in eval mode (or at p = 0) this is exactly the identity. Plane
/// decisions consume one Bernoulli draw each, batch-major then channel.
pub fn spatial_dropout<S: Scalar>(
    tape: &mut GradTape<S>,
    x: &Tensor<S>,
    p: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor<S>> {
    require_rank(x, 4, "spatial_dropout input")?;
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let [b, h, w, c] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let keep_scale = S::from_f64(1.0 / (1.0 - p));
    let plane_mask: Vec<S> = (0..b * c)
        .map(|_| {
            if rng.bernoulli(p) {
                S::zero()
            } else {
                keep_scale
            }
        })
        .collect();
    let xd = x.data();
    let mut data = vec![S::zero(); xd.len()];
    for bi in 0..b {
        for pix in 0..h * w {
            let base = (bi * h * w + pix) * c;
            for ch in 0..c {
                data[base + ch] = xd[base + ch] * plane_mask[bi * c + ch];
            }
        }
    }
    let out = Tensor::from_vec(x.shape().clone(), data)?;
    emit(tape, "spatial_dropout", &[x], out, || Rule::SpatialDropout {
        plane_mask,
        dims: [b, h, w, c],
    })
}

pub(super) fn spatial_dropout_backward<S: Scalar>(
    plane_mask: &[S],
    dims: [usize; 4],
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    let [b, h, w, c] = dims;
    let dx = needs[0].then(|| {
        let mut dx = vec![S::zero(); dy.len()];
        for bi in 0..b {
            for pix in 0..h * w {
                let base = (bi * h * w + pix) * c;
                for ch in 0..c {
                    dx[base + ch] = dy[base + ch] * plane_mask[bi * c + ch];
                }
            }
        }
        dx
    });
    Ok(vec![dx])
}
