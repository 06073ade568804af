use super::{emit, require_rank, store, InputGrads, Rule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::GradTape;
use crate::tensor::Tensor;

/// Layer norm over the last (channel) axis: γ·(x−μ)/√(σ²+ε) + β per position.
pub fn layer_norm<S: Scalar>(
    tape: &mut GradTape<S>,
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: S,
) -> Result<Tensor<S>> {
    require_rank(gamma, 1, "layer_norm gamma")?;
    require_rank(beta, 1, "layer_norm beta")?;
    let c = x.shape().last_dim();
    if gamma.dims()[0] != c || beta.dims()[0] != c {
        return Err(Error::Dimension(format!(
            "layer_norm params must have length {c}, got gamma {} beta {}",
            gamma.shape(),
            beta.shape()
        )));
    }
    if eps <= S::zero() {
        return Err(Error::Contract("layer_norm eps must be > 0".into()));
    }
    let positions = x.numel() / c;
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let epsf = eps.as_f64();
    let mut acc = vec![0.0f64; xd.len()];
    for p in 0..positions {
        let row = &xd[p * c..(p + 1) * c];
        let mut mean = 0.0f64;
        for &v in row {
            mean += v.as_f64();
        }
        mean /= c as f64;
        let mut var = 0.0f64;
        for &v in row {
            let d = v.as_f64() - mean;
            var += d * d;
        }
        var /= c as f64;
        let inv = 1.0 / (var + epsf).sqrt();
        let out = &mut acc[p * c..(p + 1) * c];
        for i in 0..c {
            let xhat = (row[i].as_f64() - mean) * inv;
            out[i] = gd[i].as_f64() * xhat + bd[i].as_f64();
        }
    }
    let out = store(x.shape().clone(), acc)?;
    emit(tape, "layer_norm", &[x, gamma, beta], out, || Rule::LayerNorm {
        x: x.clone(),
        gamma: gamma.clone(),
        eps,
    })
}

pub(super) fn layer_norm_backward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    eps: S,
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    let c = x.shape().last_dim();
    let positions = x.numel() / c;
    let xd = x.data();
    let gd = gamma.data();
    let epsf = eps.as_f64();

    let mut dx = needs[0].then(|| vec![0.0f64; xd.len()]);
    let mut dgamma = needs[1].then(|| vec![0.0f64; c]);
    let mut dbeta = needs[2].then(|| vec![0.0f64; c]);

    let mut xhat = vec![0.0f64; c];
    for p in 0..positions {
        let row = &xd[p * c..(p + 1) * c];
        let mut mean = 0.0f64;
        for &v in row {
            mean += v.as_f64();
        }
        mean /= c as f64;
        let mut var = 0.0f64;
        for &v in row {
            let d = v.as_f64() - mean;
            var += d * d;
        }
        var /= c as f64;
        let inv = 1.0 / (var + epsf).sqrt();
        for i in 0..c {
            xhat[i] = (row[i].as_f64() - mean) * inv;
        }
        let dyrow = &dy[p * c..(p + 1) * c];
        if let Some(dg) = dgamma.as_mut() {
            for i in 0..c {
                dg[i] += dyrow[i].as_f64() * xhat[i];
            }
        }
        if let Some(db) = dbeta.as_mut() {
            for i in 0..c {
                db[i] += dyrow[i].as_f64();
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dxhat_i = dy_i * gamma_i; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
            let mut m1 = 0.0f64;
            let mut m2 = 0.0f64;
            for i in 0..c {
                let g = dyrow[i].as_f64() * gd[i].as_f64();
                m1 += g;
                m2 += g * xhat[i];
            }
            m1 /= c as f64;
            m2 /= c as f64;
            let out = &mut dx[p * c..(p + 1) * c];
            for i in 0..c {
                let g = dyrow[i].as_f64() * gd[i].as_f64();
                out[i] = inv * (g - m1 - xhat[i] * m2);
            }
        }
    }
    Ok(vec![
        dx.map(|v| v.into_iter().map(S::from_f64).collect()),
        dgamma.map(|v| v.into_iter().map(S::from_f64).collect()),
        dbeta.map(|v| v.into_iter().map(S::from_f64).collect()),
    ])
}
