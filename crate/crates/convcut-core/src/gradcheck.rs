//! Finite-difference verification of the autodiff engine. Used both by the
//! test suite and by the `gradcheck` CLI command.
//!
//! Every check builds a scalar loss from a set of input tensors, takes the
//! tape gradients, and compares them element by element against central
//! differences (f(x+h) − f(x−h)) / 2h. An element passes when
//! |g − ĝ| ≤ tol · max(1, |g|, |ĝ|).

use crate::error::{Error, Result};
use crate::ops::Padding;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tape::GradTape;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOL: f64 = 1e-3;

/// Worst element seen while checking one loss.
#[derive(Debug, Clone)]
pub struct ElementReport {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub worst: Option<ElementReport>,
    pub passed: bool,
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "ok" } else { "FAIL" };
        write!(
            f,
            "{:<24} max rel err {:.3e}  {}",
            self.name, self.max_rel_error, status
        )?;
        if let Some(w) = &self.worst {
            if !self.passed {
                write!(
                    f,
                    "  (worst: {}[{}] analytic {:.6e} vs numeric {:.6e})",
                    w.tensor, w.index, w.analytic, w.numeric
                )?;
            }
        }
        Ok(())
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}

/// Check one scalar loss against central differences.
///
/// `build` must be a pure function of the given inputs: it is re-run with
/// perturbed copies, so any randomness inside has to be re-seeded identically
/// on every call. `sample` caps how many elements are probed per tensor
/// (evenly strided, so runs are reproducible); `None` probes all of them.
pub fn check_loss<S: Scalar>(
    name: &str,
    inputs: &[(&str, Tensor<S>)],
    sample: Option<usize>,
    tol: f64,
    build: impl Fn(&mut GradTape<S>, &[Tensor<S>]) -> Result<Tensor<S>>,
) -> Result<CheckReport> {
    check_loss_inner(name, inputs, sample, tol, 0.0, build)
}

/// `grad_offset` is added to every analytic gradient element before the
/// comparison; nonzero values emulate a broken backward rule so the harness's
/// sensitivity can itself be tested.
fn check_loss_inner<S: Scalar>(
    name: &str,
    inputs: &[(&str, Tensor<S>)],
    sample: Option<usize>,
    tol: f64,
    grad_offset: f64,
    build: impl Fn(&mut GradTape<S>, &[Tensor<S>]) -> Result<Tensor<S>>,
) -> Result<CheckReport> {
    let tracked: Vec<Tensor<S>> = inputs
        .iter()
        .map(|(_, t)| t.clone().with_requires_grad(true))
        .collect();
    let mut tape = GradTape::new();
    let loss = build(&mut tape, &tracked)?;
    let grads = tape.backward(&loss)?;

    let eval = |tensors: &[Tensor<S>]| -> Result<f64> {
        let mut tape = GradTape::disabled();
        Ok(build(&mut tape, tensors)?.item()?.as_f64())
    };

    let h = DEFAULT_STEP;
    let mut max_rel = 0.0f64;
    let mut worst: Option<ElementReport> = None;
    for (ti, (tname, _)) in inputs.iter().enumerate() {
        let base = &tracked[ti];
        let analytic = grads.get(base).ok_or_else(|| {
            Error::Contract(format!("no gradient recorded for input `{tname}` in {name}"))
        })?;
        let n = base.numel();
        let indices: Vec<usize> = match sample {
            Some(k) if k < n => {
                let stride = n.div_ceil(k).max(1);
                (0..n).step_by(stride).take(k).collect()
            }
            _ => (0..n).collect(),
        };
        for idx in indices {
            let mut plus = base.to_vec();
            let mut minus = base.to_vec();
            plus[idx] += S::from_f64(h);
            minus[idx] -= S::from_f64(h);
            let mut probe = tracked.clone();
            probe[ti] = Tensor::from_vec(base.shape().clone(), plus)?;
            let f_plus = eval(&probe)?;
            probe[ti] = Tensor::from_vec(base.shape().clone(), minus)?;
            let f_minus = eval(&probe)?;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic.data()[idx].as_f64() + grad_offset;
            let rel = rel_error(a, numeric);
            if rel > max_rel {
                max_rel = rel;
                worst = Some(ElementReport {
                    tensor: tname.to_string(),
                    index: idx,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(CheckReport {
        name: name.to_string(),
        max_rel_error: max_rel,
        worst,
        passed: max_rel <= tol,
    })
}

fn rand<S: Scalar>(rng: &mut Rng, dims: &[usize]) -> Tensor<S> {
    Tensor::rand_uniform(Shape::new(dims.to_vec()).unwrap(), -1.0, 1.0, rng)
}

fn conv_out(extent: usize, k: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Valid => (extent - k) / stride + 1,
        Padding::Same => extent.div_ceil(stride),
    }
}

/// Finite-difference suite over every tensor op, `instances` random shapes
/// per op. `corrupt` perturbs one op's analytic gradients before comparison —
/// a fixture proving the harness notices a broken backward rule.
pub fn op_suite<S: Scalar>(
    seed: u64,
    instances: usize,
    tol: f64,
    corrupt: Option<&str>,
) -> Result<Vec<CheckReport>> {
    use crate::ops;
    let mut rng = Rng::new(seed);
    let mut reports = Vec::new();
    let corrupt_matched = std::cell::Cell::new(false);
    let off = |base: &str| -> f64 {
        if corrupt == Some(base) {
            corrupt_matched.set(true);
            0.05
        } else {
            0.0
        }
    };
    let spatial = [3usize, 4, 5, 6, 7, 8];
    let chans = [1usize, 2, 3, 4];

    for i in 0..instances {
        let m = 2 + i % 3;
        let k = 2 + (i + 1) % 3;
        let n = 2 + (i + 2) % 3;
        let b = 1 + i % 2;
        let h = spatial[i % spatial.len()];
        let w = spatial[(i + 2) % spatial.len()];
        let c = chans[i % chans.len()];

        {
            let a = rand::<S>(&mut rng, &[m, k]);
            let bt = rand::<S>(&mut rng, &[k, n]);
            let r = rand::<S>(&mut rng, &[m, n]);
            reports.push(check_loss_inner(
                &format!("matmul/{i}"),
                &[("a", a), ("b", bt)],
                None,
                tol,
                off("matmul"),
                |tape, ins| {
                    let y = ops::matmul(tape, &ins[0], &ins[1])?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let a = rand::<S>(&mut rng, &[b, m, k]);
            let bt = rand::<S>(&mut rng, &[b, k, n]);
            let r = rand::<S>(&mut rng, &[b, m, n]);
            reports.push(check_loss_inner(
                &format!("bmm/{i}"),
                &[("a", a), ("b", bt)],
                None,
                tol,
                off("bmm"),
                |tape, ins| {
                    let y = ops::bmm(tape, &ins[0], &ins[1])?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let a = rand::<S>(&mut rng, &[b, m, n]);
            let r = rand::<S>(&mut rng, &[b, n, m]);
            reports.push(check_loss_inner(
                &format!("transpose_last2/{i}"),
                &[("x", a)],
                None,
                tol,
                off("transpose_last2"),
                |tape, ins| {
                    let y = ops::transpose_last2(tape, &ins[0])?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let a = rand::<S>(&mut rng, &[m, n]);
            let bt = rand::<S>(&mut rng, &[m, n]);
            let r = rand::<S>(&mut rng, &[m, n]);
            reports.push(check_loss_inner(
                &format!("add/{i}"),
                &[("a", a), ("b", bt)],
                None,
                tol,
                off("add"),
                |tape, ins| {
                    let y = ops::add(tape, &ins[0], &ins[1])?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let a = rand::<S>(&mut rng, &[m, n]);
            let r = rand::<S>(&mut rng, &[m, n]);
            let factor = S::from_f64(rng.uniform(-2.0, 2.0));
            reports.push(check_loss_inner(
                &format!("scale/{i}"),
                &[("x", a)],
                None,
                tol,
                off("scale"),
                |tape, ins| {
                    let y = ops::scale(tape, &ins[0], factor)?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let x = rand::<S>(&mut rng, &[b, h, w, c]);
            let s = rand::<S>(&mut rng, &[c]);
            let r = rand::<S>(&mut rng, &[b, h, w, c]);
            reports.push(check_loss_inner(
                &format!("scale_channels/{i}"),
                &[("x", x), ("scales", s)],
                None,
                tol,
                off("scale_channels"),
                |tape, ins| {
                    let y = ops::scale_channels(tape, &ins[0], &ins[1])?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let x = rand::<S>(&mut rng, &[m, n]);
            let r = rand::<S>(&mut rng, &[m * n]);
            reports.push(check_loss_inner(
                &format!("reshape/{i}"),
                &[("x", x)],
                None,
                tol,
                off("reshape"),
                |tape, ins| {
                    let y = ops::reshape(tape, &ins[0], Shape::new(vec![m * n])?)?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let x = rand::<S>(&mut rng, &[m, 5]);
            let r = rand::<S>(&mut rng, &[m, 5]);
            reports.push(check_loss_inner(
                &format!("softmax/{i}"),
                &[("x", x)],
                None,
                tol,
                off("softmax"),
                |tape, ins| {
                    let y = ops::softmax(tape, &ins[0])?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let x = rand::<S>(&mut rng, &[m, 5]);
            let r = rand::<S>(&mut rng, &[m, 5]);
            reports.push(check_loss_inner(
                &format!("log_softmax/{i}"),
                &[("x", x)],
                None,
                tol,
                off("log_softmax"),
                |tape, ins| {
                    let y = ops::log_softmax(tape, &ins[0])?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let x = rand::<S>(&mut rng, &[m, 5]);
            let labels: Vec<usize> = (0..m).map(|_| rng.below(5)).collect();
            reports.push(check_loss_inner(
                &format!("nll_mean/{i}"),
                &[("log_probs", x)],
                None,
                tol,
                off("nll_mean"),
                |tape, ins| ops::nll_mean(tape, &ins[0], &labels),
            )?);
        }
        {
            let x = rand::<S>(&mut rng, &[m, n]);
            let r = rand::<S>(&mut rng, &[m, n]);
            reports.push(check_loss_inner(
                &format!("gelu/{i}"),
                &[("x", x)],
                None,
                tol,
                off("gelu"),
                |tape, ins| {
                    let y = ops::gelu(tape, &ins[0])?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let cc = 4 + i % 3;
            let x = rand::<S>(&mut rng, &[m, cc]);
            let g = rand::<S>(&mut rng, &[cc]);
            let beta = rand::<S>(&mut rng, &[cc]);
            let r = rand::<S>(&mut rng, &[m, cc]);
            reports.push(check_loss_inner(
                &format!("layer_norm/{i}"),
                &[("x", x), ("gamma", g), ("beta", beta)],
                None,
                tol,
                off("layer_norm"),
                |tape, ins| {
                    let y = ops::layer_norm(tape, &ins[0], &ins[1], &ins[2], S::from_f64(1e-5))?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let ksz = [1usize, 2, 3][i % 3];
            let stride = 1 + i % 2;
            let padding = if i % 2 == 0 {
                Padding::Valid
            } else {
                Padding::Same
            };
            let x = rand::<S>(&mut rng, &[b, h, w, c]);
            let kn = rand::<S>(&mut rng, &[ksz, ksz, c]);
            let (oh, ow) = (
                conv_out(h, ksz, stride, padding),
                conv_out(w, ksz, stride, padding),
            );
            let r = rand::<S>(&mut rng, &[b, oh, ow, c]);
            reports.push(check_loss_inner(
                &format!("conv2d_depthwise/{i}"),
                &[("x", x), ("kernel", kn)],
                None,
                tol,
                off("conv2d_depthwise"),
                |tape, ins| {
                    let y = ops::conv2d_depthwise(tape, &ins[0], &ins[1], stride, padding)?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let cout = 1 + (i + 1) % 4;
            let x = rand::<S>(&mut rng, &[b, h, w, c]);
            let kn = rand::<S>(&mut rng, &[c, cout]);
            let bias = rand::<S>(&mut rng, &[cout]);
            let r = rand::<S>(&mut rng, &[b, h, w, cout]);
            reports.push(check_loss_inner(
                &format!("conv2d_pointwise/{i}"),
                &[("x", x), ("kernel", kn), ("bias", bias)],
                None,
                tol,
                off("conv2d_pointwise"),
                |tape, ins| {
                    let y = ops::conv2d_pointwise(tape, &ins[0], &ins[1], &ins[2])?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let x = rand::<S>(&mut rng, &[b, h, w, c]);
            let r = rand::<S>(&mut rng, &[b, c]);
            reports.push(check_loss_inner(
                &format!("spatial_mean/{i}"),
                &[("x", x)],
                None,
                tol,
                off("spatial_mean"),
                |tape, ins| {
                    let y = ops::spatial_mean(tape, &ins[0])?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            // The mask must repeat across re-evaluations, so the closure
            // re-seeds its own generator.
            let x = rand::<S>(&mut rng, &[b, h, w, c]);
            let r = rand::<S>(&mut rng, &[b, h, w, c]);
            let mask_seed = rng.next_u64();
            reports.push(check_loss_inner(
                &format!("spatial_dropout/{i}"),
                &[("x", x)],
                None,
                tol,
                off("spatial_dropout"),
                |tape, ins| {
                    let mut mask_rng = Rng::new(mask_seed);
                    let y = ops::spatial_dropout(tape, &ins[0], 0.3, true, &mut mask_rng)?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let x = rand::<S>(&mut rng, &[b, 4, 6, c]);
            let r = rand::<S>(&mut rng, &[b, 2, 3, 4 * c]);
            reports.push(check_loss_inner(
                &format!("space_to_patches/{i}"),
                &[("x", x)],
                None,
                tol,
                off("space_to_patches"),
                |tape, ins| {
                    let y = ops::space_to_patches(tape, &ins[0], 2)?;
                    ops::weighted_sum(tape, &y, &r)
                },
            )?);
        }
        {
            let x = rand::<S>(&mut rng, &[m, n]);
            let idx = rng.below(m * n);
            reports.push(check_loss_inner(
                &format!("take_index/{i}"),
                &[("x", x)],
                None,
                tol,
                off("take_index"),
                |tape, ins| ops::take_index(tape, &ins[0], idx),
            )?);
        }
    }

    if let Some(op) = corrupt {
        if !corrupt_matched.get() {
            return Err(Error::Lookup(format!("no op named `{op}` in the suite")));
        }
    }
    Ok(reports)
}

/// Finite-difference check of a whole model: sparse cross entropy of a
/// training-mode forward (dropout re-seeded identically per evaluation) on a
/// random batch, probing `sample` elements of every parameter tensor.
pub fn model_check<S: Scalar>(
    cfg: &crate::model::ConvCutConfig,
    input_size: usize,
    batch: usize,
    seed: u64,
    sample: usize,
    tol: f64,
) -> Result<CheckReport> {
    let mut rng = Rng::new(seed);
    let model = crate::model::build_model::<S>(cfg, &mut rng)?;
    let x = Tensor::rand_uniform(
        Shape::new(vec![batch, input_size, input_size, 3])?,
        0.0,
        1.0,
        &mut rng,
    );
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(cfg.num_classes)).collect();
    let dropout_seed = rng.next_u64();

    let params = model.named_params();
    let inputs: Vec<(&str, Tensor<S>)> = params
        .iter()
        .map(|(n, t)| (n.as_str(), t.clone()))
        .collect();
    check_loss(
        "model/tiny",
        &inputs,
        Some(sample),
        tol,
        |tape, tracked| {
            let mut m = model.clone();
            let mut i = 0;
            m.for_each_param_mut(&mut |_, p| {
                *p = tracked[i].clone();
                i += 1;
            });
            let mut fwd_rng = Rng::new(dropout_seed);
            let logits = m.forward(tape, &x, true, &mut fwd_rng)?;
            let lp = crate::ops::log_softmax(tape, &logits)?;
            crate::ops::nll_mean(tape, &lp, &labels)
        },
    )
}
