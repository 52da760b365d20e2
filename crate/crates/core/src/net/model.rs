use rayon::prelude::*;

use super::{ModelConfig, ModelParams, Variant};
use crate::block::{assemble_baseline, assemble_scheme_a, assemble_scheme_b, BlockSample};
use crate::error::{Error, Result};
use crate::media_io::ChromaFormat;
use crate::tensor::{
    concat, conv1d, conv1d_backward, conv2d, conv2d_backward, dense, dense_backward, matmul, matmul_backward,
    matmul_bt, matmul_bt_backward, mse_loss, mse_loss_backward, relu, relu_backward, softmax_rows,
    softmax_rows_backward, split, Padding, Scalar, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Raw head output.
    Train,
    /// Output clamped to `[0, 1]`.
    Inference,
}

/// Network-ready inputs for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<T> {
    pub variant: Variant,
    pub n: usize,
    /// `(2N+1) × C_in` boundary sequence, position-major.
    pub boundary: Tensor<T>,
    /// `H × W × C_in` luma block.
    pub luma: Tensor<T>,
}

impl<T: Scalar> ModelInput<T> {
    pub fn from_sample(variant: Variant, sample: &BlockSample) -> Result<Self> {
        let required = match variant {
            Variant::Baseline => None,
            Variant::SchemeA => Some(ChromaFormat::Yuv420),
            Variant::SchemeB => Some(ChromaFormat::Yuv444),
        };
        if let Some(fmt) = required.filter(|&f| f != sample.format) {
            return Err(Error::VariantMismatch {
                model: variant.to_string(),
                input: format!("{} samples (needs {fmt})", sample.format),
            });
        }
        let (s, x) = match variant {
            Variant::Baseline => assemble_baseline(sample)?,
            Variant::SchemeA => assemble_scheme_a(sample)?,
            Variant::SchemeB => assemble_scheme_b(sample)?,
        };
        let luma = match x.rank() {
            2 => {
                let [h, w] = [x.shape()[0], x.shape()[1]];
                x.reshape([h, w, 1])?
            }
            _ => x,
        };
        Ok(Self {
            variant,
            n: sample.n,
            boundary: s.transpose2()?,
            luma,
        })
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    b1_pre: Tensor<T>,
    b1: Tensor<T>,
    b2_pre: Tensor<T>,
    b2: Tensor<T>,
    down_pre: Option<Tensor<T>>,
    /// Luma fed to the first luma-branch convolution.
    luma_in: Tensor<T>,
    l1_pre: Tensor<T>,
    l1: Tensor<T>,
    l2_pre: Tensor<T>,
    /// `N² × C` luma features.
    l_rows: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    /// `N² × (2N+1)` attention weights.
    pub attention: Tensor<T>,
    fused: Tensor<T>,
    h1_pre: Tensor<T>,
    h1: Tensor<T>,
}

impl<T: Scalar> Trace<T> {
    /// Output of the learned stride-2 layer (scheme A only).
    pub fn downsampled_luma(&self) -> Option<&Tensor<T>> {
        self.down_pre.as_ref().map(|_| &self.luma_in)
    }

    /// Smallest distance of any ReLU input from the kink at zero.
    pub fn relu_margin(&self) -> T {
        [&self.b1_pre, &self.b2_pre, &self.l1_pre, &self.l2_pre, &self.h1_pre]
            .into_iter()
            .chain(self.down_pre.as_ref())
            .flat_map(|t| t.data().iter().map(|v| v.abs()))
            .fold(T::infinity(), T::min)
    }
}

/// A model configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaNet<T = f32> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Scalar> ChromaNet<T> {
    pub fn new(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        params.check_layout(&config)?;
        Ok(Self { config, params })
    }

    fn check_input(&self, input: &ModelInput<T>) -> Result<()> {
        if input.variant != self.config.variant {
            return Err(Error::VariantMismatch {
                model: self.config.variant.to_string(),
                input: input.variant.to_string(),
            });
        }
        let v = self.config.variant;
        let n = input.n;
        let luma_side = if v == Variant::SchemeA { 2 * n } else { n };
        let b = [2 * n + 1, v.boundary_channels()];
        let l = [luma_side, luma_side, v.luma_channels()];
        if input.boundary.shape() != b || input.luma.shape() != l {
            return Err(Error::Shape(format!(
                "{v} expects boundary {b:?} and luma {l:?}, got {:?} and {:?}",
                input.boundary.shape(),
                input.luma.shape()
            )));
        }
        Ok(())
    }

    fn w(&self, layer: &str) -> (&Tensor<T>, &Tensor<T>) {
        (
            self.params.get(&format!("{layer}.weight")),
            self.params.get(&format!("{layer}.bias")),
        )
    }

    /// `N × N × 2` prediction (channel 0 = Cb).
    pub fn forward(&self, input: &ModelInput<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, _) = self.forward_traced(input)?;
        Ok(match mode {
            Mode::Train => out,
            Mode::Inference => out.map(|v| v.max(T::zero()).min(T::one())),
        })
    }

    /// Unclamped forward pass plus the activations needed for backward.
    pub fn forward_traced(&self, input: &ModelInput<T>) -> Result<(Tensor<T>, Trace<T>)> {
        self.check_input(input)?;
        let n = input.n;
        let c = self.config.c_branch;

        let (w, b) = self.w("boundary.conv1");
        let b1_pre = conv1d(&input.boundary, w, b, 1, Padding::Same)?;
        let b1 = relu(&b1_pre);
        let (w, b) = self.w("boundary.conv2");
        let b2_pre = conv1d(&b1, w, b, 1, Padding::Same)?;
        let b2 = relu(&b2_pre);

        let (down_pre, luma_in) = if self.config.variant == Variant::SchemeA {
            let (w, b) = self.w("luma.down");
            let pre = conv2d(&input.luma, w, b, 2, Padding::Same)?;
            let act = relu(&pre);
            (Some(pre), act)
        } else {
            (None, input.luma.clone())
        };
        let (w, b) = self.w("luma.conv1");
        let l1_pre = conv2d(&luma_in, w, b, 1, Padding::Same)?;
        let l1 = relu(&l1_pre);
        let (w, b) = self.w("luma.conv2");
        let l2_pre = conv2d(&l1, w, b, 1, Padding::Same)?;
        let l_rows = relu(&l2_pre).reshape([n * n, c])?;

        let (w, b) = self.w("attn.query");
        let q = dense(&l_rows, w, b)?;
        let key = self.params.get("attn.key.weight");
        let k = dense(&b2, key, &Tensor::zeros([key.shape()[1]]))?;
        let (w, b) = self.w("attn.value");
        let v = dense(&b2, w, b)?;
        let mut logits = matmul_bt(&q, &k)?;
        logits.scale(self.attn_scale());
        let attention = softmax_rows(&logits)?;
        let attended = matmul(&attention, &v)?;

        let fused = concat(&l_rows, &attended, 1)?.reshape([n, n, 2 * c])?;
        let (w, b) = self.w("head.conv1");
        let h1_pre = conv2d(&fused, w, b, 1, Padding::Same)?;
        let h1 = relu(&h1_pre);
        let (w, b) = self.w("head.conv2");
        let out = conv2d(&h1, w, b, 1, Padding::Same)?;

        Ok((
            out,
            Trace {
                b1_pre,
                b1,
                b2_pre,
                b2,
                down_pre,
                luma_in,
                l1_pre,
                l1,
                l2_pre,
                l_rows,
                q,
                k,
                v,
                attention,
                fused,
                h1_pre,
                h1,
            },
        ))
    }

    fn attn_scale(&self) -> T {
        T::lit(1.0 / (self.config.d_attn as f64).sqrt())
    }

    /// Parameter gradients for `d loss / d output = grad_out`.
    pub fn backward(&self, input: &ModelInput<T>, trace: &Trace<T>, grad_out: &Tensor<T>) -> Result<ModelParams<T>> {
        let n = input.n;
        let c = self.config.c_branch;
        let mut grads = self.params.zeros_like();
        let mut put = |layer: &str, w: Tensor<T>, b: Option<Tensor<T>>| {
            *grads.get_mut(&format!("{layer}.weight")) = w;
            if let Some(b) = b {
                *grads.get_mut(&format!("{layer}.bias")) = b;
            }
        };

        let g = conv2d_backward(&trace.h1, self.w("head.conv2").0, 1, Padding::Same, grad_out)?;
        put("head.conv2", g.weight, Some(g.bias));
        let g_h1 = relu_backward(&trace.h1_pre, &g.input)?;
        let g = conv2d_backward(&trace.fused, self.w("head.conv1").0, 1, Padding::Same, &g_h1)?;
        put("head.conv1", g.weight, Some(g.bias));
        let (mut g_lrows, g_att) = split(&g.input.reshape([n * n, 2 * c])?, 1, c)?;

        let gm = matmul_backward(&trace.attention, &trace.v, &g_att)?;
        let mut g_logits = softmax_rows_backward(&trace.attention, &gm.a)?;
        g_logits.scale(self.attn_scale());
        let gqk = matmul_bt_backward(&trace.q, &trace.k, &g_logits)?;

        let g = dense_backward(&trace.b2, self.w("attn.value").0, &gm.b)?;
        put("attn.value", g.weight, Some(g.bias));
        let mut g_b2 = g.input;
        let g = dense_backward(&trace.b2, self.params.get("attn.key.weight"), &gqk.b)?;
        put("attn.key", g.weight, None);
        g_b2.add_assign(&g.input)?;
        let g = dense_backward(&trace.l_rows, self.w("attn.query").0, &gqk.a)?;
        put("attn.query", g.weight, Some(g.bias));
        g_lrows.add_assign(&g.input)?;

        let g_l2 = relu_backward(&trace.l2_pre, &g_lrows.reshape([n, n, c])?)?;
        let g = conv2d_backward(&trace.l1, self.w("luma.conv2").0, 1, Padding::Same, &g_l2)?;
        put("luma.conv2", g.weight, Some(g.bias));
        let g_l1 = relu_backward(&trace.l1_pre, &g.input)?;
        let g = conv2d_backward(&trace.luma_in, self.w("luma.conv1").0, 1, Padding::Same, &g_l1)?;
        put("luma.conv1", g.weight, Some(g.bias));
        if let Some(down_pre) = &trace.down_pre {
            let g_down = relu_backward(down_pre, &g.input)?;
            let g = conv2d_backward(&input.luma, self.w("luma.down").0, 2, Padding::Same, &g_down)?;
            put("luma.down", g.weight, Some(g.bias));
        }

        let g_b2 = relu_backward(&trace.b2_pre, &g_b2)?;
        let g = conv1d_backward(&trace.b1, self.w("boundary.conv2").0, 1, Padding::Same, &g_b2)?;
        put("boundary.conv2", g.weight, Some(g.bias));
        let g_b1 = relu_backward(&trace.b1_pre, &g.input)?;
        let g = conv1d_backward(&input.boundary, self.w("boundary.conv1").0, 1, Padding::Same, &g_b1)?;
        put("boundary.conv1", g.weight, Some(g.bias));

        Ok(grads)
    }

    fn check_batch(&self, inputs: &[ModelInput<T>], targets: &[Tensor<T>]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let n = inputs[0].n;
        if inputs.iter().any(|i| i.n != n) {
            return Err(Error::InvalidArgument(
                "batch mixes block sizes; batches must be uniform".into(),
            ));
        }
        Ok(())
    }

    /// Mean squared error over the batch (pixels and both channels).
    pub fn loss(&self, inputs: &[ModelInput<T>], targets: &[Tensor<T>]) -> Result<T> {
        self.check_batch(inputs, targets)?;
        let losses = inputs
            .par_iter()
            .zip(targets)
            .map(|(x, t)| mse_loss(&self.forward(x, Mode::Train)?, t))
            .collect::<Result<Vec<T>>>()?;
        Ok(losses.into_iter().sum::<T>() / T::lit(inputs.len() as f64))
    }

    /// Batch loss and exact reverse-mode gradients. Per-block gradients are
    /// summed in batch order, so results do not depend on thread count.
    pub fn loss_and_grads(&self, inputs: &[ModelInput<T>], targets: &[Tensor<T>]) -> Result<(T, ModelParams<T>)> {
        self.check_batch(inputs, targets)?;
        let inv = T::lit(1.0 / inputs.len() as f64);
        let per_block = inputs
            .par_iter()
            .zip(targets)
            .map(|(x, t)| {
                let (out, trace) = self.forward_traced(x)?;
                let loss = mse_loss(&out, t)?;
                let mut g = mse_loss_backward(&out, t)?;
                g.scale(inv);
                Ok((loss, self.backward(x, &trace, &g)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = T::zero();
        let mut grads = self.params.zeros_like();
        for (l, g) in per_block {
            total += l;
            grads.add_assign(&g)?;
        }
        Ok((total * inv, grads))
    }
}
