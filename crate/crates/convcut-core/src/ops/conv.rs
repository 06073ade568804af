use super::{emit, require_rank, store, InputGrads, Rule};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tape::GradTape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output extent is floor((in - k)/stride) + 1.
    Valid,
    /// Zero padding to give ceil(in/stride) outputs, extra pad on bottom/right.
    Same,
}

impl std::fmt::Display for Padding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Padding::Valid => write!(f, "valid"),
            Padding::Same => write!(f, "same"),
        }
    }
}

/// Output extent and leading pad for one spatial axis.
fn axis_geometry(input: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if k > input {
                return Err(Error::Dimension(format!(
                    "kernel {k} larger than input extent {input} under valid padding"
                )));
            }
            Ok(((input - k) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

/// Per-channel spatial convolution: each channel has its own k×k filter.
pub fn conv2d_depthwise<S: Scalar>(
    tape: &mut GradTape<S>,
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<S>> {
    require_rank(x, 4, "depthwise conv input")?;
    require_rank(kernel, 3, "depthwise conv kernel")?;
    let [b, h, w, c] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let [kh, kw, kc] = [kernel.dims()[0], kernel.dims()[1], kernel.dims()[2]];
    if kh != kw {
        return Err(Error::Dimension(format!(
            "depthwise kernel must be square, got {}",
            kernel.shape()
        )));
    }
    if kc != c {
        return Err(Error::Dimension(format!(
            "depthwise kernel channels {kc} != input channels {c}"
        )));
    }
    if stride == 0 {
        return Err(Error::Dimension("stride must be >= 1".into()));
    }
    let (oh, pad_top) = axis_geometry(h, kh, stride, padding)?;
    let (ow, pad_left) = axis_geometry(w, kw, stride, padding)?;

    let xd = x.data();
    let kd = kernel.data();
    let mut acc = vec![0.0f64; b * oh * ow * c];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let out_base = ((bi * oh + oy) * ow + ox) * c;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad_left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let in_base = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let k_base = (ky * kw + kx) * c;
                        for ch in 0..c {
                            acc[out_base + ch] +=
                                xd[in_base + ch].as_f64() * kd[k_base + ch].as_f64();
                        }
                    }
                }
            }
        }
    }
    let out = store(Shape::new(vec![b, oh, ow, c])?, acc)?;
    emit(tape, "conv2d_depthwise", &[x, kernel], out, || {
        Rule::DepthwiseConv {
            x: x.clone(),
            kernel: kernel.clone(),
            stride,
            padding,
        }
    })
}

pub(super) fn depthwise_backward<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: Padding,
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    let [b, h, w, c] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let [kh, kw, _] = [kernel.dims()[0], kernel.dims()[1], kernel.dims()[2]];
    let (oh, pad_top) = axis_geometry(h, kh, stride, padding)?;
    let (ow, pad_left) = axis_geometry(w, kw, stride, padding)?;
    let xd = x.data();
    let kd = kernel.data();

    let mut dx = needs[0].then(|| vec![0.0f64; b * h * w * c]);
    let mut dk = needs[1].then(|| vec![0.0f64; kh * kw * c]);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let out_base = ((bi * oh + oy) * ow + ox) * c;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad_left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let in_base = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let k_base = (ky * kw + kx) * c;
                        for ch in 0..c {
                            let g = dy[out_base + ch].as_f64();
                            if let Some(dx) = dx.as_mut() {
                                dx[in_base + ch] += kd[k_base + ch].as_f64() * g;
                            }
                            if let Some(dk) = dk.as_mut() {
                                dk[k_base + ch] += xd[in_base + ch].as_f64() * g;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(vec![
        dx.map(|v| v.into_iter().map(S::from_f64).collect()),
        dk.map(|v| v.into_iter().map(S::from_f64).collect()),
    ])
}

/// 1×1 convolution mixing channels: a per-pixel linear map plus bias.
pub fn conv2d_pointwise<S: Scalar>(
    tape: &mut GradTape<S>,
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    require_rank(x, 4, "pointwise conv input")?;
    require_rank(kernel, 2, "pointwise conv kernel")?;
    require_rank(bias, 1, "pointwise conv bias")?;
    let [b, h, w, cin] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let (kin, cout) = (kernel.dims()[0], kernel.dims()[1]);
    if kin != cin {
        return Err(Error::Dimension(format!(
            "pointwise kernel expects {kin} channels, input has {cin}"
        )));
    }
    if bias.dims()[0] != cout {
        return Err(Error::Dimension(format!(
            "pointwise bias length {} != output channels {cout}",
            bias.dims()[0]
        )));
    }
    let pixels = b * h * w;
    let xd = x.data();
    let kd = kernel.data();
    let mut acc: Vec<f64> = Vec::with_capacity(pixels * cout);
    for _ in 0..pixels {
        acc.extend(bias.data().iter().map(|v| v.as_f64()));
    }
    for p in 0..pixels {
        let row = &mut acc[p * cout..(p + 1) * cout];
        for ci in 0..cin {
            let xv = xd[p * cin + ci].as_f64();
            if xv == 0.0 {
                continue;
            }
            let krow = &kd[ci * cout..(ci + 1) * cout];
            for (o, kv) in row.iter_mut().zip(krow) {
                *o += xv * kv.as_f64();
            }
        }
    }
    let out = store(Shape::new(vec![b, h, w, cout])?, acc)?;
    emit(tape, "conv2d_pointwise", &[x, kernel, bias], out, || {
        Rule::PointwiseConv {
            x: x.clone(),
            kernel: kernel.clone(),
        }
    })
}

pub(super) fn pointwise_backward<S: Scalar>(
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    let [b, h, w, cin] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let cout = kernel.dims()[1];
    let pixels = b * h * w;
    let xd = x.data();
    let kd = kernel.data();

    let dx = needs[0].then(|| {
        let mut acc = vec![0.0f64; pixels * cin];
        for p in 0..pixels {
            for ci in 0..cin {
                let mut s = 0.0;
                for co in 0..cout {
                    s += dy[p * cout + co].as_f64() * kd[ci * cout + co].as_f64();
                }
                acc[p * cin + ci] = s;
            }
        }
        acc.into_iter().map(S::from_f64).collect()
    });
    let dk = needs[1].then(|| {
        let mut acc = vec![0.0f64; cin * cout];
        for p in 0..pixels {
            for ci in 0..cin {
                let xv = xd[p * cin + ci].as_f64();
                if xv == 0.0 {
                    continue;
                }
                let row = &mut acc[ci * cout..(ci + 1) * cout];
                for (o, g) in row.iter_mut().zip(&dy[p * cout..(p + 1) * cout]) {
                    *o += xv * g.as_f64();
                }
            }
        }
        acc.into_iter().map(S::from_f64).collect()
    });
    let db = needs[2].then(|| {
        let mut acc = vec![0.0f64; cout];
        for p in 0..pixels {
            for (o, g) in acc.iter_mut().zip(&dy[p * cout..(p + 1) * cout]) {
                *o += g.as_f64();
            }
        }
        acc.into_iter().map(S::from_f64).collect()
    });
    Ok(vec![dx, dk, db])
}

/// Regroup non-overlapping k×k patches into the channel axis:
/// [B,H,W,C] -> [B,H/k,W/k,k*k*C]. Combined with a pointwise conv this is a
/// full k×k stride-k convolution (the patchify stem and the downsample).
pub fn space_to_patches<S: Scalar>(
    tape: &mut GradTape<S>,
    x: &Tensor<S>,
    patch: usize,
) -> Result<Tensor<S>> {
    require_rank(x, 4, "space_to_patches input")?;
    let [b, h, w, c] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Dimension(format!(
            "spatial dims {h}x{w} not divisible by patch size {patch}"
        )));
    }
    let (oh, ow) = (h / patch, w / patch);
    let oc = patch * patch * c;
    let xd = x.data();
    let mut out = vec![S::zero(); xd.len()];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let out_base = ((bi * oh + oy) * ow + ox) * oc;
                for py in 0..patch {
                    for px in 0..patch {
                        let in_base = ((bi * h + oy * patch + py) * w + ox * patch + px) * c;
                        let dst = out_base + (py * patch + px) * c;
                        out[dst..dst + c].copy_from_slice(&xd[in_base..in_base + c]);
                    }
                }
            }
        }
    }
    let out = Tensor::from_vec(Shape::new(vec![b, oh, ow, oc])?, out)?;
    emit(tape, "space_to_patches", &[x], out, || Rule::SpaceToPatches {
        in_dims: [b, h, w, c],
        patch,
    })
}

pub(super) fn space_to_patches_backward<S: Scalar>(
    in_dims: [usize; 4],
    patch: usize,
    dy: &[S],
    needs: &[bool],
) -> Result<InputGrads<S>> {
    let [b, h, w, c] = in_dims;
    let (oh, ow) = (h / patch, w / patch);
    let oc = patch * patch * c;
    let dx = needs[0].then(|| {
        let mut dx = vec![S::zero(); b * h * w * c];
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    let out_base = ((bi * oh + oy) * ow + ox) * oc;
                    for py in 0..patch {
                        for px in 0..patch {
                            let in_base = ((bi * h + oy * patch + py) * w + ox * patch + px) * c;
                            let src = out_base + (py * patch + px) * c;
                            dx[in_base..in_base + c].copy_from_slice(&dy[src..src + c]);
                        }
                    }
                }
            }
        }
        dx
    });
    Ok(vec![dx])
}
