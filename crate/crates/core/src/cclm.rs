//! Least-squares cross-component linear model.

use crate::block::BlockSample;
use crate::error::{Error, Result};

/// Below this luma variance the slope is forced to zero.
const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub alpha: f64,
    pub beta: f64,
}

impl LinearModel {
    pub fn apply(&self, luma: f64) -> f64 {
        self.alpha * luma + self.beta
    }
}

/// Ordinary least squares of `chroma` on `luma`.
pub fn derive_lm(luma: &[f64], chroma: &[f64]) -> Result<LinearModel> {
    if luma.len() != chroma.len() {
        return Err(Error::Shape(format!(
            "luma boundary has {} entries, chroma has {}",
            luma.len(),
            chroma.len()
        )));
    }
    if luma.len() < 2 {
        return Err(Error::InvalidArgument(
            "linear model needs at least two boundary pairs".into(),
        ));
    }
    let n = luma.len() as f64;
    let mean_l = luma.iter().sum::<f64>() / n;
    let mean_c = chroma.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&x, &y) in luma.iter().zip(chroma) {
        let dx = x - mean_l;
        sxx += dx * dx;
        sxy += dx * (y - mean_c);
    }
    if sxx / n < MIN_VARIANCE {
        return Ok(LinearModel {
            alpha: 0.0,
            beta: mean_c,
        });
    }
    let alpha = sxy / sxx;
    Ok(LinearModel {
        alpha,
        beta: mean_c - alpha * mean_l,
    })
}

/// `alpha·luma + beta`, clamped to `[0, 1]`.
pub fn predict_lm(model: &LinearModel, luma_block: &[f64]) -> Vec<f64> {
    luma_block.iter().map(|&l| model.apply(l).clamp(0.0, 1.0)).collect()
}

/// Fits one model per chroma component from the block's boundary. Only
/// index pairs where both luma and chroma are available take part; with
/// fewer than two such pairs the model degenerates to the mean chroma of
/// whatever entries exist.
pub fn fit_sample(sample: &BlockSample) -> Result<(LinearModel, LinearModel)> {
    let luma = sample.luma_boundary_on_chroma_grid()?;
    let fit = |chroma: &crate::block::BoundaryArray| -> Result<LinearModel> {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for i in 0..chroma.len() {
            if luma.available[i] && chroma.available[i] {
                xs.push(luma.values[i] as f64);
                ys.push(chroma.values[i] as f64);
            }
        }
        match xs.len() {
            0 => {
                let ys: Vec<f64> = chroma.values.iter().map(|&v| v as f64).collect();
                Ok(LinearModel {
                    alpha: 0.0,
                    beta: ys.iter().sum::<f64>() / ys.len() as f64,
                })
            }
            1 => Ok(LinearModel {
                alpha: 0.0,
                beta: ys[0],
            }),
            _ => derive_lm(&xs, &ys),
        }
    };
    Ok((fit(&sample.b_cb)?, fit(&sample.b_cr)?))
}

/// Linear-model prediction of both chroma blocks, each `N×N` row-major.
pub fn predict_sample(sample: &BlockSample) -> Result<(Vec<f64>, Vec<f64>)> {
    let (cb, cr) = fit_sample(sample)?;
    let luma: Vec<f64> = sample.luma_on_chroma_grid().into_iter().map(|v| v as f64).collect();
    Ok((predict_lm(&cb, &luma), predict_lm(&cr, &luma)))
}
