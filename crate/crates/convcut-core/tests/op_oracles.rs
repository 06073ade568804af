//! Forward-value checks for every tensor op against independent oracles.
//! The oracles here are deliberately naive (nested loops, textbook formulas)
//! and never call into the op implementations they check.

use convcut_core::ops::{self, Padding};
use convcut_core::rng::Rng;
use convcut_core::shape::Shape;
use convcut_core::tape::GradTape;
use convcut_core::tensor::Tensor;
use convcut_core::shape;

type T = Tensor<f32>;

fn tape() -> GradTape<f32> {
    GradTape::disabled()
}

fn rand(rng: &mut Rng, dims: &[usize]) -> T {
    T::rand_uniform(Shape::new(dims.to_vec()).unwrap(), -1.0, 1.0, rng)
}

fn assert_close(got: &[f32], want: &[f32], tol: f32, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length mismatch");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!(
            (g - w).abs() <= tol,
            "{what}: element {i} differs: got {g}, want {w}"
        );
    }
}

// ---- oracles -------------------------------------------------------------

fn oracle_matmul(a: &T, b: &T) -> Vec<f32> {
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let n = b.dims()[1];
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                out[i * n + j] += a.data()[i * k + l] * b.data()[l * n + j];
            }
        }
    }
    out
}

fn oracle_softmax_row(row: &[f32]) -> Vec<f32> {
    let exps: Vec<f32> = row.iter().map(|v| v.exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn oracle_gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

fn oracle_layer_norm(x: &T, gamma: &[f32], beta: &[f32], eps: f32) -> Vec<f32> {
    let c = *x.dims().last().unwrap();
    let positions = x.numel() / c;
    let mut out = vec![0.0f32; x.numel()];
    for p in 0..positions {
        let row = &x.data()[p * c..(p + 1) * c];
        let mean: f32 = row.iter().sum::<f32>() / c as f32;
        let var: f32 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
        for i in 0..c {
            out[p * c + i] = gamma[i] * (row[i] - mean) / (var + eps).sqrt() + beta[i];
        }
    }
    out
}

/// Sliding-window depthwise convolution, zero padding handled by bounds.
fn oracle_depthwise(x: &T, k: &T, stride: usize, pad_top: usize, pad_left: usize, oh: usize, ow: usize) -> Vec<f32> {
    let [b, h, w, c] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let ks = k.dims()[0];
    let mut out = vec![0.0f32; b * oh * ow * c];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut acc = 0.0f32;
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let iy = (oy * stride + ky) as isize - pad_top as isize;
                            let ix = (ox * stride + kx) as isize - pad_left as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x.at4(bi, iy as usize, ix as usize, ch)
                                * k.data()[(ky * ks + kx) * c + ch];
                        }
                    }
                    out[((bi * oh + oy) * ow + ox) * c + ch] = acc;
                }
            }
        }
    }
    out
}

fn oracle_pointwise(x: &T, k: &T, bias: &[f32]) -> Vec<f32> {
    let [b, h, w, cin] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let cout = k.dims()[1];
    let mut out = vec![0.0f32; b * h * w * cout];
    for p in 0..b * h * w {
        for co in 0..cout {
            let mut acc = bias[co];
            for ci in 0..cin {
                acc += x.data()[p * cin + ci] * k.data()[ci * cout + co];
            }
            out[p * cout + co] = acc;
        }
    }
    out
}

fn oracle_spatial_mean(x: &T) -> Vec<f32> {
    let [b, h, w, c] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let mut out = vec![0.0f32; b * c];
    for bi in 0..b {
        for ch in 0..c {
            let mut acc = 0.0f32;
            for y in 0..h {
                for xw in 0..w {
                    acc += x.at4(bi, y, xw, ch);
                }
            }
            out[bi * c + ch] = acc / (h * w) as f32;
        }
    }
    out
}

// ---- matmul ---------------------------------------------------------------

#[test]
fn matmul_identity() {
    let i2 = T::from_vec(shape![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let m = T::from_vec(shape![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = ops::matmul(&mut tape(), &i2, &m).unwrap();
    assert_eq!(y.data(), m.data());
}

#[test]
fn matmul_projector() {
    let p = T::from_vec(shape![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let m = T::from_vec(shape![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
    let y = ops::matmul(&mut tape(), &p, &m).unwrap();
    assert_eq!(y.data(), &[5.0, 6.0, 0.0, 0.0]);
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut rng = Rng::new(101);
    let a = rand(&mut rng, &[3, 4]);
    let b = rand(&mut rng, &[4, 2]);
    let y = ops::matmul(&mut tape(), &a, &b).unwrap();
    assert_close(y.data(), &oracle_matmul(&a, &b), 1e-5, "matmul");
}

#[test]
fn matmul_rejects_mismatched_inner_dims() {
    let a = T::zeros(shape![2, 3]);
    let b = T::zeros(shape![4, 2]);
    assert!(ops::matmul(&mut tape(), &a, &b).is_err());
}

// ---- softmax ----------------------------------------------------------------

#[test]
fn softmax_uniform_input() {
    let x = T::from_vec(shape![3], vec![0.0; 3]).unwrap();
    let y = ops::softmax(&mut tape(), &x).unwrap();
    assert_close(y.data(), &[1.0 / 3.0; 3], 1e-7, "softmax symmetry");
}

#[test]
fn softmax_closed_form_ratio() {
    let x = T::from_vec(shape![2], vec![0.0, 3.0f32.ln()]).unwrap();
    let y = ops::softmax(&mut tape(), &x).unwrap();
    assert_close(y.data(), &[0.25, 0.75], 1e-6, "softmax e^x ratio");
}

#[test]
fn softmax_matches_exp_sum_oracle() {
    let mut rng = Rng::new(7);
    let x = rand(&mut rng, &[8]);
    let y = ops::softmax(&mut tape(), &x).unwrap();
    assert_close(y.data(), &oracle_softmax_row(x.data()), 1e-6, "softmax");
}

#[test]
fn softmax_rows_sum_to_one_and_shift_invariant() {
    let mut rng = Rng::new(33);
    for _ in 0..20 {
        let x = rand(&mut rng, &[4, 6]);
        let y = ops::softmax(&mut tape(), &x).unwrap();
        for r in 0..4 {
            let sum: f32 = y.data()[r * 6..(r + 1) * 6].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6, "row sum {sum}");
        }
        let shifted: Vec<f32> = x.data().iter().map(|v| v + 2.5).collect();
        let xs = T::from_vec(shape![4, 6], shifted).unwrap();
        let ys = ops::softmax(&mut tape(), &xs).unwrap();
        assert_close(ys.data(), y.data(), 1e-6, "softmax shift invariance");
    }
}

// ---- gelu ----------------------------------------------------------------

#[test]
fn gelu_zero_is_zero() {
    let x = T::from_vec(shape![1], vec![0.0]).unwrap();
    let y = ops::gelu(&mut tape(), &x).unwrap();
    assert_eq!(y.data()[0], 0.0);
}

#[test]
fn gelu_large_positive_approaches_identity() {
    let x = T::from_vec(shape![1], vec![10.0]).unwrap();
    let y = ops::gelu(&mut tape(), &x).unwrap();
    assert!((y.data()[0] - 10.0).abs() <= 1e-4);
}

#[test]
fn gelu_matches_scalar_reference_at_one() {
    let x = T::from_vec(shape![1], vec![1.0]).unwrap();
    let y = ops::gelu(&mut tape(), &x).unwrap();
    assert!((y.data()[0] as f64 - oracle_gelu_scalar(1.0)).abs() <= 1e-6);
}

// ---- layer_norm -------------------------------------------------------------

#[test]
fn layer_norm_constant_input_gives_zeros() {
    let x = T::full(shape![2, 4], 3.25);
    let gamma = T::ones(shape![4]);
    let beta = T::zeros(shape![4]);
    let y = ops::layer_norm(&mut tape(), &x, &gamma, &beta, 1e-5).unwrap();
    for &v in y.data() {
        assert!(v.abs() <= 1e-6, "expected 0, got {v}");
    }
}

#[test]
fn layer_norm_gamma_zero_collapses_to_beta() {
    let mut rng = Rng::new(4);
    let x = rand(&mut rng, &[3, 5]);
    let gamma = T::zeros(shape![5]);
    let beta = T::full(shape![5], -1.5);
    let y = ops::layer_norm(&mut tape(), &x, &gamma, &beta, 1e-5).unwrap();
    for &v in y.data() {
        assert_eq!(v, -1.5);
    }
}

#[test]
fn layer_norm_matches_two_pass_oracle() {
    let mut rng = Rng::new(12);
    let x = rand(&mut rng, &[2, 3, 4]);
    let gamma = rand(&mut rng, &[4]);
    let beta = rand(&mut rng, &[4]);
    let y = ops::layer_norm(&mut tape(), &x, &gamma, &beta, 1e-5).unwrap();
    let want = oracle_layer_norm(&x, gamma.data(), beta.data(), 1e-5);
    assert_close(y.data(), &want, 1e-5, "layer_norm");
}

#[test]
fn layer_norm_normalizes_mean_and_variance() {
    let mut rng = Rng::new(90);
    let x = T::rand_uniform(shape![4, 6], -2.0, 2.0, &mut rng);
    let gamma = T::ones(shape![6]);
    let beta = T::zeros(shape![6]);
    let y = ops::layer_norm(&mut tape(), &x, &gamma, &beta, 1e-6).unwrap();
    for p in 0..4 {
        let row = &y.data()[p * 6..(p + 1) * 6];
        let mean: f32 = row.iter().sum::<f32>() / 6.0;
        let var: f32 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 6.0;
        assert!(mean.abs() <= 1e-5, "mean {mean}");
        assert!((var - 1.0).abs() <= 1e-3, "var {var}");
    }
}

// ---- conv2d_depthwise ------------------------------------------------------

#[test]
fn depthwise_center_one_kernel_is_identity() {
    let mut rng = Rng::new(3);
    let x = rand(&mut rng, &[1, 5, 5, 2]);
    let mut k = vec![0.0f32; 3 * 3 * 2];
    k[(1 * 3 + 1) * 2] = 1.0;
    k[(1 * 3 + 1) * 2 + 1] = 1.0;
    let kernel = T::from_vec(shape![3, 3, 2], k).unwrap();
    let y = ops::conv2d_depthwise(&mut tape(), &x, &kernel, 1, Padding::Same).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn depthwise_ones_kernel_on_constant_field() {
    let x = T::full(shape![1, 4, 4, 3], 0.5);
    let kernel = T::ones(shape![2, 2, 3]);
    let y = ops::conv2d_depthwise(&mut tape(), &x, &kernel, 2, Padding::Valid).unwrap();
    assert_eq!(y.dims(), &[1, 2, 2, 3]);
    for &v in y.data() {
        assert!((v - 2.0).abs() <= 1e-6); // 4 * 0.5
    }
}

#[test]
fn depthwise_k4s4_matches_sliding_window_oracle() {
    let mut rng = Rng::new(21);
    let x = rand(&mut rng, &[1, 8, 8, 3]);
    let kernel = rand(&mut rng, &[4, 4, 3]);
    let y = ops::conv2d_depthwise(&mut tape(), &x, &kernel, 4, Padding::Valid).unwrap();
    assert_eq!(y.dims(), &[1, 2, 2, 3]);
    let want = oracle_depthwise(&x, &kernel, 4, 0, 0, 2, 2);
    assert_close(y.data(), &want, 1e-5, "depthwise k4s4");
}

#[test]
fn depthwise_exhaustive_small_grid_matches_oracle() {
    let mut rng = Rng::new(55);
    for h in 1..=8usize {
        for w in 1..=8usize {
            for c in 1..=4usize {
                for &ks in &[1usize, 2, 3] {
                    for &stride in &[1usize, 2] {
                        for &padding in &[Padding::Valid, Padding::Same] {
                            if padding == Padding::Valid && (ks > h || ks > w) {
                                continue;
                            }
                            let x = rand(&mut rng, &[1, h, w, c]);
                            let k = rand(&mut rng, &[ks, ks, c]);
                            let y =
                                ops::conv2d_depthwise(&mut tape(), &x, &k, stride, padding)
                                    .unwrap();
                            let (oh, ow, pt, pl) = match padding {
                                Padding::Valid => {
                                    ((h - ks) / stride + 1, (w - ks) / stride + 1, 0, 0)
                                }
                                Padding::Same => {
                                    let oh = h.div_ceil(stride);
                                    let ow = w.div_ceil(stride);
                                    let pth = ((oh - 1) * stride + ks).saturating_sub(h) / 2;
                                    let plw = ((ow - 1) * stride + ks).saturating_sub(w) / 2;
                                    (oh, ow, pth, plw)
                                }
                            };
                            assert_eq!(y.dims(), &[1, oh, ow, c]);
                            let want = oracle_depthwise(&x, &k, stride, pt, pl, oh, ow);
                            assert_close(
                                y.data(),
                                &want,
                                1e-5,
                                &format!("depthwise {h}x{w}x{c} k{ks}s{stride} {padding}"),
                            );
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn depthwise_kernel_larger_than_input_errors() {
    let x = T::zeros(shape![1, 3, 3, 1]);
    let k = T::zeros(shape![4, 4, 1]);
    assert!(ops::conv2d_depthwise(&mut tape(), &x, &k, 1, Padding::Valid).is_err());
}

// ---- conv2d_pointwise -------------------------------------------------------

#[test]
fn pointwise_identity_kernel_is_identity() {
    let mut rng = Rng::new(61);
    let x = rand(&mut rng, &[1, 3, 3, 3]);
    let mut k = vec![0.0f32; 9];
    for i in 0..3 {
        k[i * 3 + i] = 1.0;
    }
    let kernel = T::from_vec(shape![3, 3], k).unwrap();
    let bias = T::zeros(shape![3]);
    let y = ops::conv2d_pointwise(&mut tape(), &x, &kernel, &bias).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn pointwise_single_pixel_is_vector_matrix_product() {
    let mut rng = Rng::new(62);
    let x = rand(&mut rng, &[1, 1, 1, 4]);
    let kernel = rand(&mut rng, &[4, 3]);
    let bias = rand(&mut rng, &[3]);
    let y = ops::conv2d_pointwise(&mut tape(), &x, &kernel, &bias).unwrap();
    for o in 0..3 {
        let mut want = bias.data()[o];
        for i in 0..4 {
            want += x.data()[i] * kernel.data()[i * 3 + o];
        }
        assert!((y.data()[o] - want).abs() <= 1e-6);
    }
}

#[test]
fn pointwise_matches_per_pixel_matmul_oracle() {
    let mut rng = Rng::new(63);
    let x = rand(&mut rng, &[1, 3, 3, 2]);
    let kernel = rand(&mut rng, &[2, 5]);
    let bias = rand(&mut rng, &[5]);
    let y = ops::conv2d_pointwise(&mut tape(), &x, &kernel, &bias).unwrap();
    assert_close(
        y.data(),
        &oracle_pointwise(&x, &kernel, bias.data()),
        1e-5,
        "pointwise",
    );
}

#[test]
fn pointwise_exhaustive_small_grid_matches_oracle() {
    let mut rng = Rng::new(64);
    for h in 1..=8usize {
        for w in (1..=8usize).step_by(3) {
            for cin in 1..=4usize {
                for cout in 1..=4usize {
                    let x = rand(&mut rng, &[2, h, w, cin]);
                    let k = rand(&mut rng, &[cin, cout]);
                    let b = rand(&mut rng, &[cout]);
                    let y = ops::conv2d_pointwise(&mut tape(), &x, &k, &b).unwrap();
                    assert_close(
                        y.data(),
                        &oracle_pointwise(&x, &k, b.data()),
                        1e-5,
                        &format!("pointwise {h}x{w} {cin}->{cout}"),
                    );
                }
            }
        }
    }
}

// ---- spatial_mean -----------------------------------------------------------

#[test]
fn spatial_mean_of_constant_is_constant() {
    let x = T::full(shape![2, 3, 3, 4], 0.7);
    let y = ops::spatial_mean(&mut tape(), &x).unwrap();
    assert_eq!(y.dims(), &[2, 4]);
    for &v in y.data() {
        assert!((v - 0.7).abs() <= 1e-6);
    }
}

#[test]
fn spatial_mean_small_example() {
    let x = T::from_vec(shape![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = ops::spatial_mean(&mut tape(), &x).unwrap();
    assert!((y.data()[0] - 2.5).abs() <= 1e-7);
}

#[test]
fn spatial_mean_matches_accumulation_oracle() {
    let mut rng = Rng::new(77);
    let x = rand(&mut rng, &[2, 7, 7, 16]);
    let y = ops::spatial_mean(&mut tape(), &x).unwrap();
    assert_close(y.data(), &oracle_spatial_mean(&x), 1e-6, "spatial_mean");
}

// ---- spatial_dropout ----------------------------------------------------------

#[test]
fn dropout_eval_mode_is_bitwise_identity() {
    let mut rng = Rng::new(80);
    let x = rand(&mut rng, &[2, 4, 4, 3]);
    let y = ops::spatial_dropout(&mut tape(), &x, 0.9, false, &mut rng).unwrap();
    assert!(y.bitwise_eq(&x));
}

#[test]
fn dropout_p_zero_is_bitwise_identity() {
    let mut rng = Rng::new(81);
    let x = rand(&mut rng, &[2, 4, 4, 3]);
    let y = ops::spatial_dropout(&mut tape(), &x, 0.0, true, &mut rng).unwrap();
    assert!(y.bitwise_eq(&x));
}

#[test]
fn dropout_rejects_bad_probability() {
    let x = T::zeros(shape![1, 2, 2, 1]);
    let mut rng = Rng::new(82);
    assert!(ops::spatial_dropout(&mut tape(), &x, 1.0, true, &mut rng).is_err());
    assert!(ops::spatial_dropout(&mut tape(), &x, -0.1, true, &mut rng).is_err());
}

#[test]
fn dropout_plane_frequency_and_scaling() {
    // 10,000 (batch, channel) planes at p = 0.5.
    let x = T::ones(shape![100, 2, 2, 100]);
    let mut rng = Rng::new(83);
    let y = ops::spatial_dropout(&mut tape(), &x, 0.5, true, &mut rng).unwrap();
    let mut dropped = 0usize;
    for b in 0..100 {
        for c in 0..100 {
            let v = y.at4(b, 0, 0, c);
            // whole plane must agree
            for p in 0..4 {
                assert_eq!(y.at4(b, p / 2, p % 2, c), v, "plane not uniform");
            }
            if v == 0.0 {
                dropped += 1;
            } else {
                assert_eq!(v, 2.0, "survivor not scaled by 1/(1-p)");
            }
        }
    }
    let frac = dropped as f64 / 10_000.0;
    assert!((frac - 0.5).abs() <= 0.02, "drop fraction {frac}");
}

// ---- determinism ---------------------------------------------------------------

#[test]
fn ops_are_deterministic() {
    let mut rng = Rng::new(99);
    let x = rand(&mut rng, &[2, 6, 6, 3]);
    let k = rand(&mut rng, &[3, 3, 3]);
    let a = ops::conv2d_depthwise(&mut tape(), &x, &k, 1, Padding::Same).unwrap();
    let b = ops::conv2d_depthwise(&mut tape(), &x, &k, 1, Padding::Same).unwrap();
    assert!(a.bitwise_eq(&b));

    let mut r1 = Rng::new(5);
    let mut r2 = Rng::new(5);
    let d1 = ops::spatial_dropout(&mut tape(), &x, 0.4, true, &mut r1).unwrap();
    let d2 = ops::spatial_dropout(&mut tape(), &x, 0.4, true, &mut r2).unwrap();
    assert!(d1.bitwise_eq(&d2));
}
