use super::{emit, store, InputGrads, Rule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::GradTape;
use crate::tensor::Tensor;

// sqrt(2/pi) for the tanh form of GELU.
const GELU_COEF: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// GELU, tanh approximation: 0.5·x·(1 + tanh(√(2/π)(x + 0.044715·x³))).
pub fn gelu<S: Scalar>(tape: &mut GradTape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let acc: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| {
            let v = v.as_f64();
            0.5 * v * (1.0 + (GELU_COEF * (v + GELU_CUBIC * v * v * v)).tanh())
        })
        .collect();
    let out = store(x.shape().clone(), acc)?;
    emit(tape, "gelu", &[x], out, || Rule::Gelu { x: x.clone() })
}

pub(super) fn gelu_backward<S: Scalar>(
    x: &Tensor<S>,
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    let dx = needs[0].then(|| {
        x.data()
            .iter()
            .zip(dy)
            .map(|(&v, &g)| {
                let v = v.as_f64();
                let u = GELU_COEF * (v + GELU_CUBIC * v * v * v);
                let t = u.tanh();
                let du = GELU_COEF * (1.0 + 3.0 * GELU_CUBIC * v * v);
                let d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                S::from_f64(d * g.as_f64())
            })
            .collect()
    });
    Ok(vec![dx])
}

fn last_axis_rows<S: Scalar>(x: &Tensor<S>) -> (usize, usize) {
    let width = x.shape().last_dim();
    (x.numel() / width, width)
}

/// Softmax over the last axis, max-subtracted for stability.
pub fn softmax<S: Scalar>(tape: &mut GradTape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    if !x.is_finite() {
        return Err(Error::NonFinite("softmax input"));
    }
    let (rows, width) = last_axis_rows(x);
    let xd = x.data();
    let mut acc = vec![0.0f64; xd.len()];
    for r in 0..rows {
        let row = &xd[r * width..(r + 1) * width];
        let max = row
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v.as_f64()));
        let out = &mut acc[r * width..(r + 1) * width];
        let mut sum = 0.0;
        for (o, &v) in out.iter_mut().zip(row) {
            let e = (v.as_f64() - max).exp();
            *o = e;
            sum += e;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
    let out = store(x.shape().clone(), acc)?;
    emit(tape, "softmax", &[x], out.clone(), || Rule::Softmax { y: out })
}

pub(super) fn softmax_backward<S: Scalar>(
    y: &Tensor<S>,
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    let dx = needs[0].then(|| {
        let (rows, width) = last_axis_rows(y);
        let yd = y.data();
        let mut out = vec![S::zero(); yd.len()];
        for r in 0..rows {
            let base = r * width;
            let mut dot = 0.0f64;
            for i in 0..width {
                dot += dy[base + i].as_f64() * yd[base + i].as_f64();
            }
            for i in 0..width {
                let yv = yd[base + i].as_f64();
                out[base + i] = S::from_f64(yv * (dy[base + i].as_f64() - dot));
            }
        }
        out
    });
    Ok(vec![dx])
}

/// log(softmax(x)) over the last axis via the log-sum-exp form.
pub fn log_softmax<S: Scalar>(tape: &mut GradTape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    if !x.is_finite() {
        return Err(Error::NonFinite("log_softmax input"));
    }
    let (rows, width) = last_axis_rows(x);
    let xd = x.data();
    let mut acc = vec![0.0f64; xd.len()];
    for r in 0..rows {
        let row = &xd[r * width..(r + 1) * width];
        let max = row
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v.as_f64()));
        let mut sum = 0.0;
        for &v in row {
            sum += (v.as_f64() - max).exp();
        }
        let lse = max + sum.ln();
        for (o, &v) in acc[r * width..(r + 1) * width].iter_mut().zip(row) {
            *o = v.as_f64() - lse;
        }
    }
    let out = store(x.shape().clone(), acc)?;
    emit(tape, "log_softmax", &[x], out.clone(), || Rule::LogSoftmax {
        y: out,
    })
}

pub(super) fn log_softmax_backward<S: Scalar>(
    y: &Tensor<S>,
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    let dx = needs[0].then(|| {
        let (rows, width) = last_axis_rows(y);
        let yd = y.data();
        let mut out = vec![S::zero(); yd.len()];
        for r in 0..rows {
            let base = r * width;
            let mut sum = 0.0f64;
            for i in 0..width {
                sum += dy[base + i].as_f64();
            }
            for i in 0..width {
                let soft = yd[base + i].as_f64().exp();
                out[base + i] = S::from_f64(dy[base + i].as_f64() - soft * sum);
            }
        }
        out
    });
    Ok(vec![dx])
}
