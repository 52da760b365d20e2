//! Shared fixtures for integration tests.
#![allow(dead_code)]

use chroma_core::block::{sample_at, BlockSample};
use chroma_core::media_io::{ChromaFormat, Frame, Plane};
use chroma_core::net::{init_params, ChromaNet, ModelConfig, ModelInput, ModelParams, Variant};
use chroma_core::tensor::{grad_check, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth-ish random 10-bit frame: low-frequency structure plus noise so
/// luma and chroma are correlated.
pub fn random_frame(width: usize, height: usize, format: ChromaFormat, seed: u64) -> Frame {
    let mut r = rng(seed);
    let (fx, fy, ph) = (r.gen_range(0.05..0.3), r.gen_range(0.05..0.3), r.gen_range(0.0..6.0));
    let (a, b) = (r.gen_range(-0.8..0.8), r.gen_range(-0.8..0.8));
    let mut y = Plane::filled(width, height, 0);
    let (cw, ch) = match format {
        ChromaFormat::Yuv444 => (width, height),
        ChromaFormat::Yuv420 => (width / 2, height / 2),
    };
    let luma_at = |x: f64, yy: f64| 0.5 + 0.35 * ((fx * x + ph).sin() * (fy * yy).cos());
    for j in 0..height {
        for i in 0..width {
            let v = luma_at(i as f64, j as f64) + r.gen_range(-0.03..0.03);
            y.set(i, j, (v.clamp(0.0, 1.0) * 1023.0).round() as u16);
        }
    }
    let scale = width / cw;
    let mut cb = Plane::filled(cw, ch, 0);
    let mut cr = Plane::filled(cw, ch, 0);
    for j in 0..ch {
        for i in 0..cw {
            let l = luma_at((i * scale) as f64, (j * scale) as f64) - 0.5;
            let u = 0.5 + a * l + r.gen_range(-0.02..0.02);
            let v = 0.5 + b * l * l * 2.0 + r.gen_range(-0.02..0.02);
            cb.set(i, j, (u.clamp(0.0, 1.0) * 1023.0).round() as u16);
            cr.set(i, j, (v.clamp(0.0, 1.0) * 1023.0).round() as u16);
        }
    }
    Frame::new(y, cb, cr, 10, format).unwrap()
}

pub fn format_for(variant: Variant) -> ChromaFormat {
    match variant {
        Variant::SchemeB => ChromaFormat::Yuv444,
        _ => ChromaFormat::Yuv420,
    }
}

/// Blocks of side `n` at random interior (and occasionally edge) origins.
pub fn random_samples(format: ChromaFormat, n: usize, count: usize, seed: u64) -> Vec<BlockSample> {
    let frame = random_frame(96, 96, format, seed);
    let mut r = rng(seed ^ 0xabc);
    let limit = frame.cb.width - n;
    (0..count)
        .map(|_| sample_at(&frame, n, (r.gen_range(0..=limit), r.gen_range(0..=limit))).unwrap())
        .collect()
}

/// He-initialized parameters with random biases, in 64-bit.
pub fn random_net(variant: Variant, seed: u64) -> ChromaNet<f64> {
    let cfg = ModelConfig::new(variant).with_seed(seed);
    let mut params: ModelParams<f64> = init_params(&cfg).unwrap().cast();
    let mut r = rng(seed.wrapping_add(99));
    let names: Vec<String> = params.names().to_vec();
    for name in names.iter().filter(|n| n.ends_with(".bias")) {
        for v in params.get_mut(name).data_mut() {
            *v = r.gen_range(-0.1..0.1);
        }
    }
    ChromaNet::new(cfg, params).unwrap()
}

pub fn inputs_and_targets(variant: Variant, samples: &[BlockSample]) -> (Vec<ModelInput<f64>>, Vec<Tensor<f64>>) {
    samples
        .iter()
        .map(|s| (ModelInput::from_sample(variant, s).unwrap(), s.target()))
        .unzip()
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Tensor with entries in `[margin, 1]` in magnitude and random sign, so no
/// entry lies near a ReLU kink.
fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let m = r.gen_range(margin..1.0);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Finite-difference steps for single-op checks. Central differences are
/// exact for functions of degree <= 2, so those ops use a large step to keep
/// roundoff down.
const POLY_FD_STEP: f64 = 1e-2;
const OP_FD_STEP: f64 = 1e-4;

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks `d/dx <r, op(x)>` against `backward(r)` for one input tensor.
fn check_input(
    x: &Tensor<f64>,
    eps: f64,
    r: &Tensor<f64>,
    op: impl Fn(&Tensor<f64>) -> Tensor<f64>,
    analytic: &Tensor<f64>,
) -> f64 {
    let shape = x.shape().to_vec();
    grad_check(
        |v| dot(r, &op(&Tensor::new(shape.clone(), v.to_vec()).unwrap())),
        x.data(),
        analytic.data(),
        eps,
    )
    .max_rel_error
}

/// Relative gradient error for every differentiable op, with the tolerance
/// each must meet: 1e-6 for smooth ops, 1e-4 for ReLU.
pub fn op_grad_errors(seed: u64) -> Vec<(&'static str, f64, f64)> {
    use chroma_core::tensor::*;
    let mut r = rng(seed ^ 0x0905);
    let smooth = 1e-6;
    let mut out = Vec::new();

    for (name, stride) in [("conv2d stride 1", 1), ("conv2d stride 2", 2)] {
        let x = random_tensor(&mut r, &[6, 5, 3], -1.0, 1.0);
        let w = random_tensor(&mut r, &[3, 3, 3, 4], -1.0, 1.0);
        let b = random_tensor(&mut r, &[4], -1.0, 1.0);
        let y = conv2d(&x, &w, &b, stride, Padding::Same).unwrap();
        let g_out = random_tensor(&mut r, y.shape(), -1.0, 1.0);
        let g = conv2d_backward(&x, &w, stride, Padding::Same, &g_out).unwrap();
        let e = check_input(
            &x,
            POLY_FD_STEP,
            &g_out,
            |x| conv2d(x, &w, &b, stride, Padding::Same).unwrap(),
            &g.input,
        )
        .max(check_input(
            &w,
            POLY_FD_STEP,
            &g_out,
            |w| conv2d(&x, w, &b, stride, Padding::Same).unwrap(),
            &g.weight,
        ))
        .max(check_input(
            &b,
            POLY_FD_STEP,
            &g_out,
            |b| conv2d(&x, &w, b, stride, Padding::Same).unwrap(),
            &g.bias,
        ));
        out.push((name, e, smooth));
    }
    {
        let x = random_tensor(&mut r, &[6, 6, 2], -1.0, 1.0);
        let w = random_tensor(&mut r, &[3, 3, 2, 3], -1.0, 1.0);
        let b = random_tensor(&mut r, &[3], -1.0, 1.0);
        let y = conv2d(&x, &w, &b, 1, Padding::Valid).unwrap();
        let g_out = random_tensor(&mut r, y.shape(), -1.0, 1.0);
        let g = conv2d_backward(&x, &w, 1, Padding::Valid, &g_out).unwrap();
        let e = check_input(
            &x,
            POLY_FD_STEP,
            &g_out,
            |x| conv2d(x, &w, &b, 1, Padding::Valid).unwrap(),
            &g.input,
        )
        .max(check_input(
            &w,
            POLY_FD_STEP,
            &g_out,
            |w| conv2d(&x, w, &b, 1, Padding::Valid).unwrap(),
            &g.weight,
        ));
        out.push(("conv2d valid", e, smooth));
    }
    {
        let x = random_tensor(&mut r, &[9, 5], -1.0, 1.0);
        let w = random_tensor(&mut r, &[3, 5, 4], -1.0, 1.0);
        let b = random_tensor(&mut r, &[4], -1.0, 1.0);
        let y = conv1d(&x, &w, &b, 1, Padding::Same).unwrap();
        let g_out = random_tensor(&mut r, y.shape(), -1.0, 1.0);
        let g = conv1d_backward(&x, &w, 1, Padding::Same, &g_out).unwrap();
        let e = check_input(
            &x,
            POLY_FD_STEP,
            &g_out,
            |x| conv1d(x, &w, &b, 1, Padding::Same).unwrap(),
            &g.input,
        )
        .max(check_input(
            &w,
            POLY_FD_STEP,
            &g_out,
            |w| conv1d(&x, w, &b, 1, Padding::Same).unwrap(),
            &g.weight,
        ))
        .max(check_input(
            &b,
            POLY_FD_STEP,
            &g_out,
            |b| conv1d(&x, &w, b, 1, Padding::Same).unwrap(),
            &g.bias,
        ));
        out.push(("conv1d", e, smooth));
    }
    {
        let x = random_tensor(&mut r, &[7, 5], -1.0, 1.0);
        let w = random_tensor(&mut r, &[5, 3], -1.0, 1.0);
        let b = random_tensor(&mut r, &[3], -1.0, 1.0);
        let g_out = random_tensor(&mut r, &[7, 3], -1.0, 1.0);
        let g = dense_backward(&x, &w, &g_out).unwrap();
        let e = check_input(&x, POLY_FD_STEP, &g_out, |x| dense(x, &w, &b).unwrap(), &g.input)
            .max(check_input(
                &w,
                POLY_FD_STEP,
                &g_out,
                |w| dense(&x, w, &b).unwrap(),
                &g.weight,
            ))
            .max(check_input(
                &b,
                POLY_FD_STEP,
                &g_out,
                |b| dense(&x, &w, b).unwrap(),
                &g.bias,
            ));
        out.push(("dense", e, smooth));
    }
    {
        let a = random_tensor(&mut r, &[4, 6], -1.0, 1.0);
        let b = random_tensor(&mut r, &[6, 3], -1.0, 1.0);
        let g_out = random_tensor(&mut r, &[4, 3], -1.0, 1.0);
        let g = matmul_backward(&a, &b, &g_out).unwrap();
        let e = check_input(&a, POLY_FD_STEP, &g_out, |a| matmul(a, &b).unwrap(), &g.a).max(check_input(
            &b,
            POLY_FD_STEP,
            &g_out,
            |b| matmul(&a, b).unwrap(),
            &g.b,
        ));
        out.push(("matmul", e, smooth));
        let bt = random_tensor(&mut r, &[5, 6], -1.0, 1.0);
        let g_out = random_tensor(&mut r, &[4, 5], -1.0, 1.0);
        let g = matmul_bt_backward(&a, &bt, &g_out).unwrap();
        let e = check_input(&a, POLY_FD_STEP, &g_out, |a| matmul_bt(a, &bt).unwrap(), &g.a).max(check_input(
            &bt,
            POLY_FD_STEP,
            &g_out,
            |b| matmul_bt(&a, b).unwrap(),
            &g.b,
        ));
        out.push(("matmul_bt", e, smooth));
    }
    {
        let x = away_from_zero(&mut r, &[5, 6], 0.05);
        let g_out = random_tensor(&mut r, &[5, 6], -1.0, 1.0);
        let g = relu_backward(&x, &g_out).unwrap();
        out.push(("relu", check_input(&x, POLY_FD_STEP, &g_out, relu, &g), 1e-4));
    }
    {
        let x = random_tensor(&mut r, &[4, 9], -3.0, 3.0);
        let g_out = random_tensor(&mut r, &[4, 9], -1.0, 1.0);
        let g = softmax_rows_backward(&softmax_rows(&x).unwrap(), &g_out).unwrap();
        out.push((
            "softmax_rows",
            check_input(&x, OP_FD_STEP, &g_out, |x| softmax_rows(x).unwrap(), &g),
            smooth,
        ));
    }
    {
        let a = random_tensor(&mut r, &[3, 9], -1.0, 1.0);
        let b = random_tensor(&mut r, &[2, 9], -1.0, 1.0);
        let g_out = random_tensor(&mut r, &[5, 9], -1.0, 1.0);
        let (ga, gb) = split(&g_out, 0, 3).unwrap();
        let e = check_input(&a, POLY_FD_STEP, &g_out, |a| concat(a, &b, 0).unwrap(), &ga).max(check_input(
            &b,
            POLY_FD_STEP,
            &g_out,
            |b| concat(&a, b, 0).unwrap(),
            &gb,
        ));
        out.push(("concat", e, smooth));
    }
    {
        let p = random_tensor(&mut r, &[4, 4, 2], 0.0, 1.0);
        let t = random_tensor(&mut r, &[4, 4, 2], 0.0, 1.0);
        let g = mse_loss_backward(&p, &t).unwrap();
        let e = grad_check(
            |v| mse_loss(&Tensor::new(p.shape().to_vec(), v.to_vec()).unwrap(), &t).unwrap(),
            p.data(),
            g.data(),
            POLY_FD_STEP,
        )
        .max_rel_error;
        out.push(("mse_loss", e, smooth));
    }
    out
}
