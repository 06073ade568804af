use super::{emit, require_rank, store, InputGrads, Rule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tape::GradTape;
use crate::tensor::Tensor;

/// Global average pool: per-channel mean over the spatial axes, [B,H,W,C] -> [B,C].
pub fn spatial_mean<S: Scalar>(tape: &mut GradTape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    require_rank(x, 4, "spatial_mean input")?;
    let [b, h, w, c] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let xd = x.data();
    let mut acc = vec![0.0f64; b * c];
    for bi in 0..b {
        for p in 0..h * w {
            let base = (bi * h * w + p) * c;
            let out = &mut acc[bi * c..(bi + 1) * c];
            for (o, &v) in out.iter_mut().zip(&xd[base..base + c]) {
                *o += v.as_f64();
            }
        }
    }
    let scale = 1.0 / (h * w) as f64;
    for o in acc.iter_mut() {
        *o *= scale;
    }
    let out = store(Shape::new(vec![b, c])?, acc)?;
    emit(tape, "spatial_mean", &[x], out, || Rule::SpatialMean {
        in_dims: [b, h, w, c],
    })
}

pub(super) fn spatial_mean_backward<S: Scalar>(
    in_dims: [usize; 4],
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    let [b, h, w, c] = in_dims;
    let dx = needs[0].then(|| {
        let scale = 1.0 / (h * w) as f64;
        let mut dx = vec![S::zero(); b * h * w * c];
        for bi in 0..b {
            for p in 0..h * w {
                let base = (bi * h * w + p) * c;
                for ch in 0..c {
                    dx[base + ch] = S::from_f64(dy[bi * c + ch].as_f64() * scale);
                }
            }
        }
        dx
    });
    Ok(vec![dx])
}

/// Scalar Σᵢ xᵢ·wᵢ with constant weights; the reducer used by gradient checks.
pub fn weighted_sum<S: Scalar>(
    tape: &mut GradTape<S>,
    x: &Tensor<S>,
    weights: &Tensor<S>,
) -> Result<Tensor<S>> {
    if weights.numel() != x.numel() {
        return Err(Error::Dimension(format!(
            "weighted_sum weights {} do not match input {}",
            weights.shape(),
            x.shape()
        )));
    }
    let mut acc = 0.0f64;
    for (&v, &w) in x.data().iter().zip(weights.data()) {
        acc += v.as_f64() * w.as_f64();
    }
    let out = Tensor::scalar(S::from_f64(acc));
    emit(tape, "weighted_sum", &[x], out, || Rule::WeightedSum {
        weights: weights.clone(),
    })
}

/// Scalar pick of one element by flat index (used for Grad-CAM's class logit).
pub fn take_index<S: Scalar>(
    tape: &mut GradTape<S>,
    x: &Tensor<S>,
    index: usize,
) -> Result<Tensor<S>> {
    if index >= x.numel() {
        return Err(Error::Contract(format!(
            "take_index {index} out of range for shape {}",
            x.shape()
        )));
    }
    let numel = x.numel();
    let out = Tensor::scalar(x.data()[index]);
    emit(tape, "take_index", &[x], out, || Rule::TakeIndex {
        index,
        numel,
    })
}

pub(super) fn take_index_backward<S: Scalar>(
    index: usize,
    numel: usize,
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    Ok(vec![needs[0].then(|| {
        let mut dx = vec![S::zero(); numel];
        dx[index] = dy[0];
        dx
    })])
}

/// Mean negative log-likelihood of the labelled entries of a [B,K] tensor of
/// log-probabilities. Composed with [`super::log_softmax`] this is the sparse
/// categorical cross entropy.
pub fn nll_mean<S: Scalar>(
    tape: &mut GradTape<S>,
    log_probs: &Tensor<S>,
    labels: &[usize],
) -> Result<Tensor<S>> {
    require_rank(log_probs, 2, "nll_mean log_probs")?;
    let (b, k) = (log_probs.dims()[0], log_probs.dims()[1]);
    if labels.len() != b {
        return Err(Error::Dimension(format!(
            "nll_mean got {} labels for batch of {b}",
            labels.len()
        )));
    }
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Data(format!(
                "label {l} out of range for {k} classes at sample index {i}"
            )));
        }
    }
    let lp = log_probs.data();
    let mut acc = 0.0f64;
    for (i, &l) in labels.iter().enumerate() {
        acc -= lp[i * k + l].as_f64();
    }
    let out = Tensor::scalar(S::from_f64(acc / b as f64));
    emit(tape, "nll_mean", &[log_probs], out, || Rule::NllMean {
        labels: labels.to_vec(),
        num_classes: k,
    })
}

pub(super) fn nll_mean_backward<S: Scalar>(
    labels: &[usize],
    num_classes: usize,
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    let dlp = needs[0].then(|| {
        let b = labels.len();
        let g = S::from_f64(-dy[0].as_f64() / b as f64);
        let mut out = vec![S::zero(); b * num_classes];
        for (i, &l) in labels.iter().enumerate() {
            out[i * num_classes + l] = g;
        }
        out
    });
    Ok(vec![dlp])
}
