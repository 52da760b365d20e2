//! Finite-difference verification of a whole network's loss gradient.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{init_params, ChromaNet, ModelConfig, ModelInput, ModelParams, Variant};
use crate::block::sample_at;
use crate::error::{Error, Result};
use crate::media_io::{ChromaFormat, Frame, Plane};
use crate::tensor::{grad_check, Tensor};

/// Central-difference step for the model check.
pub const MODEL_FD_STEP: f64 = 2e-5;

/// Instances with a ReLU input closer than this to zero are redrawn: a
/// probe straddling the kink measures a secant, not the derivative.
pub const RELU_MARGIN: f64 = 2e-4;

const MAX_ATTEMPTS: u64 = 1000;

#[derive(Debug, Clone, Serialize)]
pub struct ModelGradCheck {
    pub variant: Variant,
    pub seed: u64,
    /// Parameters perturbed.
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// A random network and batch at `N = 4` in 64-bit precision.
pub struct GradInstance {
    pub net: ChromaNet<f64>,
    pub inputs: Vec<ModelInput<f64>>,
    pub targets: Vec<Tensor<f64>>,
}

fn synthetic_frame(format: ChromaFormat, rng: &mut ChaCha8Rng) -> Result<Frame> {
    let (w, h) = (32, 32);
    let (cw, ch) = match format {
        ChromaFormat::Yuv444 => (w, h),
        ChromaFormat::Yuv420 => (w / 2, h / 2),
    };
    let mut plane = |pw: usize, ph: usize| {
        let (fx, fy, ph0) = (
            rng.gen_range(0.05..0.4),
            rng.gen_range(0.05..0.4),
            rng.gen_range(0.0..6.0),
        );
        let data = (0..pw * ph)
            .map(|i| {
                let (x, y) = ((i % pw) as f64, (i / pw) as f64);
                let v = 0.5 + 0.3 * (fx * x + ph0).sin() * (fy * y).cos() + rng.gen_range(-0.1..0.1);
                (v.clamp(0.0, 1.0) * 1023.0).round() as u16
            })
            .collect();
        Plane::new(pw, ph, data)
    };
    let y = plane(w, h)?;
    let cb = plane(cw, ch)?;
    let cr = plane(cw, ch)?;
    Frame::new(y, cb, cr, 10, format)
}

fn random_instance(variant: Variant, seed: u64) -> Result<GradInstance> {
    let cfg = ModelConfig::new(variant).with_seed(seed);
    let mut params: ModelParams<f64> = init_params(&cfg)?.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c0d_e7a1);
    let names = params.names().to_vec();
    for name in names.iter().filter(|n| n.ends_with(".bias")) {
        for v in params.get_mut(name).data_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    // Centre the predictions on the sample range so the loss, and with it
    // the roundoff in its finite differences, stays small.
    params.get_mut("head.conv2.weight").scale(0.1);
    for v in params.get_mut("head.conv2.bias").data_mut() {
        *v = rng.gen_range(0.4..0.6);
    }
    let format = match variant {
        Variant::SchemeB => ChromaFormat::Yuv444,
        _ => ChromaFormat::Yuv420,
    };
    let frame = synthetic_frame(format, &mut rng)?;
    let limit = frame.cb.width - 4;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..2 {
        let origin = (rng.gen_range(0..=limit), rng.gen_range(0..=limit));
        let s = sample_at(&frame, 4, origin)?;
        inputs.push(ModelInput::from_sample(variant, &s)?);
        targets.push(s.target());
    }
    Ok(GradInstance {
        net: ChromaNet::new(cfg, params)?,
        inputs,
        targets,
    })
}

/// Deterministic in `seed`: candidate instances are drawn until every ReLU
/// input of the batch is at least [`RELU_MARGIN`] away from zero.
pub fn smooth_instance(variant: Variant, seed: u64) -> Result<GradInstance> {
    for attempt in 0..MAX_ATTEMPTS {
        let inst = random_instance(variant, seed.wrapping_mul(MAX_ATTEMPTS).wrapping_add(attempt))?;
        let mut margin = f64::INFINITY;
        for x in &inst.inputs {
            margin = margin.min(inst.net.forward_traced(x)?.1.relu_margin());
        }
        if margin >= RELU_MARGIN {
            return Ok(inst);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no kink-free instance within {MAX_ATTEMPTS} draws for seed {seed}"
    )))
}

/// Compares the analytic loss gradient with central differences. With
/// `per_tensor = None` every parameter is perturbed, otherwise that many
/// distinct random coordinates of each tensor.
pub fn check_model_gradients(variant: Variant, seed: u64, per_tensor: Option<usize>) -> Result<ModelGradCheck> {
    let GradInstance { net, inputs, targets } = smooth_instance(variant, seed)?;
    let (_, grads) = net.loss_and_grads(&inputs, &targets)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6ead);
    let mut coords = Vec::new();
    let mut owners = Vec::new();
    let mut offset = 0;
    for (name, t) in net.params.iter() {
        let picked: Vec<usize> = match per_tensor {
            Some(k) if k < t.len() => sample(&mut rng, t.len(), k).into_vec(),
            _ => (0..t.len()).collect(),
        };
        for i in picked {
            coords.push(offset + i);
            owners.push((name.to_owned(), i));
        }
        offset += t.len();
    }
    let flat = net.params.flatten();
    let all_grads = grads.flatten();
    let point: Vec<f64> = coords.iter().map(|&i| flat[i]).collect();
    let analytic: Vec<f64> = coords.iter().map(|&i| all_grads[i]).collect();
    let mut probe = net.clone();
    let mut values = flat;
    let mut failure = None;
    let check = grad_check(
        |x| {
            for (&i, &v) in coords.iter().zip(x) {
                values[i] = v;
            }
            let loss = probe
                .params
                .unflatten(&values)
                .and_then(|_| probe.loss(&inputs, &targets));
            loss.unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &point,
        &analytic,
        MODEL_FD_STEP,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let w = check.worst_index;
    Ok(ModelGradCheck {
        variant,
        seed,
        checked: coords.len(),
        max_rel_error: check.max_rel_error,
        worst_param: owners[w].0.clone(),
        worst_index: owners[w].1,
        analytic: analytic[w],
        numeric: check.numeric[w],
    })
}
