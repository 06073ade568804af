use super::{emit, require_rank, store, InputGrads, Rule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tape::GradTape;
use crate::tensor::Tensor;

fn mm_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn to_f64<S: Scalar>(xs: &[S]) -> Vec<f64> {
    xs.iter().map(|x| x.as_f64()).collect()
}

/// Matrix product of a [M,K] by a [K,N].
pub fn matmul<S: Scalar>(
    tape: &mut GradTape<S>,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<Tensor<S>> {
    require_rank(a, 2, "matmul lhs")?;
    require_rank(b, 2, "matmul rhs")?;
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let (k2, n) = (b.dims()[0], b.dims()[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dims disagree: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let mut acc = vec![0.0f64; m * n];
    mm_into(&to_f64(a.data()), &to_f64(b.data()), m, k, n, &mut acc);
    let out = store(Shape::new(vec![m, n])?, acc)?;
    emit(tape, "matmul", &[a, b], out, || Rule::Matmul {
        a: a.clone(),
        b: b.clone(),
    })
}

pub(super) fn matmul_backward<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let n = b.dims()[1];
    let dyf = to_f64(dy);
    let da = needs[0].then(|| {
        // dA = dY · Bᵀ
        let bf = to_f64(b.data());
        let mut acc = vec![0.0f64; m * k];
        for i in 0..m {
            for l in 0..k {
                let mut s = 0.0;
                for j in 0..n {
                    s += dyf[i * n + j] * bf[l * n + j];
                }
                acc[i * k + l] = s;
            }
        }
        acc.into_iter().map(S::from_f64).collect()
    });
    let db = needs[1].then(|| {
        // dB = Aᵀ · dY
        let af = to_f64(a.data());
        let mut acc = vec![0.0f64; k * n];
        for i in 0..m {
            for l in 0..k {
                let av = af[i * k + l];
                if av == 0.0 {
                    continue;
                }
                let row = &mut acc[l * n..(l + 1) * n];
                for (o, &g) in row.iter_mut().zip(&dyf[i * n..(i + 1) * n]) {
                    *o += av * g;
                }
            }
        }
        acc.into_iter().map(S::from_f64).collect()
    });
    Ok(vec![da, db])
}

/// Batched matrix product of [B,M,K] by [B,K,N].
pub fn bmm<S: Scalar>(tape: &mut GradTape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    require_rank(a, 3, "bmm lhs")?;
    require_rank(b, 3, "bmm rhs")?;
    let (bs, m, k) = (a.dims()[0], a.dims()[1], a.dims()[2]);
    let (bs2, k2, n) = (b.dims()[0], b.dims()[1], b.dims()[2]);
    if bs != bs2 || k != k2 {
        return Err(Error::Dimension(format!(
            "bmm shapes disagree: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let af = to_f64(a.data());
    let bf = to_f64(b.data());
    let mut acc = vec![0.0f64; bs * m * n];
    for i in 0..bs {
        mm_into(
            &af[i * m * k..(i + 1) * m * k],
            &bf[i * k * n..(i + 1) * k * n],
            m,
            k,
            n,
            &mut acc[i * m * n..(i + 1) * m * n],
        );
    }
    let out = store(Shape::new(vec![bs, m, n])?, acc)?;
    emit(tape, "bmm", &[a, b], out, || Rule::Bmm {
        a: a.clone(),
        b: b.clone(),
    })
}

pub(super) fn bmm_backward<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    let (bs, m, k) = (a.dims()[0], a.dims()[1], a.dims()[2]);
    let n = b.dims()[2];
    let dyf = to_f64(dy);
    let da = needs[0].then(|| {
        let bf = to_f64(b.data());
        let mut acc = vec![0.0f64; bs * m * k];
        for bi in 0..bs {
            let dyb = &dyf[bi * m * n..(bi + 1) * m * n];
            let bb = &bf[bi * k * n..(bi + 1) * k * n];
            let out = &mut acc[bi * m * k..(bi + 1) * m * k];
            for i in 0..m {
                for l in 0..k {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += dyb[i * n + j] * bb[l * n + j];
                    }
                    out[i * k + l] = s;
                }
            }
        }
        acc.into_iter().map(S::from_f64).collect()
    });
    let db = needs[1].then(|| {
        let af = to_f64(a.data());
        let mut acc = vec![0.0f64; bs * k * n];
        for bi in 0..bs {
            let ab = &af[bi * m * k..(bi + 1) * m * k];
            let dyb = &dyf[bi * m * n..(bi + 1) * m * n];
            let out = &mut acc[bi * k * n..(bi + 1) * k * n];
            for i in 0..m {
                for l in 0..k {
                    let av = ab[i * k + l];
                    if av == 0.0 {
                        continue;
                    }
                    let row = &mut out[l * n..(l + 1) * n];
                    for (o, &g) in row.iter_mut().zip(&dyb[i * n..(i + 1) * n]) {
                        *o += av * g;
                    }
                }
            }
        }
        acc.into_iter().map(S::from_f64).collect()
    });
    Ok(vec![da, db])
}

pub(super) fn transpose_buffer<S: Scalar>(
    x: &[S],
    batch: usize,
    rows: usize,
    cols: usize,
) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for b in 0..batch {
        let src = &x[b * rows * cols..(b + 1) * rows * cols];
        let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}

/// Swap the last two axes of a rank-2 or rank-3 tensor.
pub fn transpose_last2<S: Scalar>(tape: &mut GradTape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    if x.rank() < 2 {
        return Err(Error::Dimension(format!(
            "transpose needs rank >= 2, got {}",
            x.shape()
        )));
    }
    let d = x.dims();
    let (batch, rows, cols) = (
        d[..d.len() - 2].iter().product::<usize>(),
        d[d.len() - 2],
        d[d.len() - 1],
    );
    let mut new_dims = d.to_vec();
    new_dims.swap(d.len() - 2, d.len() - 1);
    let out = Tensor::from_vec(
        Shape::new(new_dims)?,
        transpose_buffer(x.data(), batch, rows, cols),
    )?;
    emit(tape, "transpose_last2", &[x], out, || Rule::TransposeLast2 {
        batch,
        rows,
        cols,
    })
}
