use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{BlockSample, BLOCK_SIZES};
use crate::cclm;
use crate::error::{Error, Result};
use crate::media_io::ChromaFormat;
use crate::net::{ChromaNet, Mode, ModelInput, Variant};

/// Reports never exceed this PSNR; identical blocks land exactly on it.
pub const PSNR_CAP: f64 = 100.0;

/// PSNR in dB of a normalized-unit MSE. A peak of 1.0 in normalized units
/// is the 10-bit peak of 1023, so the value equals 10-bit PSNR.
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn mse(pred: impl Iterator<Item = f64>, target: &[f32]) -> f64 {
    let sum: f64 = pred.zip(target).map(|(p, &t)| (p - t as f64).powi(2)).sum();
    sum / target.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    Nn,
    Lm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mse_cb: f64,
    pub mse_cr: f64,
    pub psnr_cb: f64,
    pub psnr_cr: f64,
}

impl Scores {
    pub fn from_mse(mse_cb: f64, mse_cr: f64) -> Self {
        Self {
            mse_cb,
            mse_cr,
            psnr_cb: psnr(mse_cb),
            psnr_cr: psnr(mse_cr),
        }
    }

    /// Mean over both chroma channels.
    pub fn chroma_mse(&self) -> f64 {
        0.5 * (self.mse_cb + self.mse_cr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub id: usize,
    pub n: usize,
    pub origin: (usize, usize),
    pub nn: Scores,
    pub lm: Scores,
    /// Predictor with the lower chroma MSE; ties go to the linear model.
    pub selected: Predictor,
}

impl BlockRecord {
    pub fn selected_mse(&self) -> f64 {
        match self.selected {
            Predictor::Nn => self.nn.chroma_mse(),
            Predictor::Lm => self.lm.chroma_mse(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub mse_cb: f64,
    pub mse_cr: f64,
    pub mse: f64,
    pub psnr_cb: f64,
    pub psnr_cr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModeCounts {
    pub nn: usize,
    pub lm: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Block side, or `None` for the overall row.
    pub n: Option<usize>,
    pub blocks: usize,
    pub nn: MeanScores,
    pub lm: MeanScores,
    /// Mean chroma MSE when each block uses its selected predictor.
    pub selected_mse: f64,
    pub mode_counts: ModeCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub chroma_format: ChromaFormat,
    pub dataset: Option<String>,
    pub records: Vec<BlockRecord>,
    pub aggregates: Vec<Aggregate>,
    pub mode_counts: ModeCounts,
}

impl EvalReport {
    pub fn overall(&self) -> &Aggregate {
        self.aggregates
            .iter()
            .find(|a| a.n.is_none())
            .expect("reports always carry an overall aggregate")
    }

    pub fn for_size(&self, n: usize) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.n == Some(n))
    }

    /// Block counts for each supported size.
    pub fn histogram(&self) -> [usize; 3] {
        BLOCK_SIZES.map(|n| self.records.iter().filter(|r| r.n == n).count())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Per-block CSV.
    pub fn records_csv(&self) -> String {
        let mut out = String::from(
            "id,n,x,y,nn_mse_cb,nn_mse_cr,nn_psnr_cb,nn_psnr_cr,lm_mse_cb,lm_mse_cr,lm_psnr_cb,lm_psnr_cr,selected\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{:.9e},{:.9e},{:.6},{:.6},{:.9e},{:.9e},{:.6},{:.6},{}\n",
                r.id,
                r.n,
                r.origin.0,
                r.origin.1,
                r.nn.mse_cb,
                r.nn.mse_cr,
                r.nn.psnr_cb,
                r.nn.psnr_cr,
                r.lm.mse_cb,
                r.lm.mse_cr,
                r.lm.psnr_cb,
                r.lm.psnr_cr,
                match r.selected {
                    Predictor::Nn => "nn",
                    Predictor::Lm => "lm",
                }
            ));
        }
        out
    }
}

fn mean_scores<'a>(scores: impl Iterator<Item = &'a Scores>) -> MeanScores {
    let mut acc = [0.0; 4];
    let mut count = 0usize;
    for s in scores {
        acc[0] += s.mse_cb;
        acc[1] += s.mse_cr;
        acc[2] += s.psnr_cb;
        acc[3] += s.psnr_cr;
        count += 1;
    }
    let k = 1.0 / count.max(1) as f64;
    MeanScores {
        mse_cb: acc[0] * k,
        mse_cr: acc[1] * k,
        mse: 0.5 * (acc[0] + acc[1]) * k,
        psnr_cb: acc[2] * k,
        psnr_cr: acc[3] * k,
    }
}

fn aggregate_of(n: Option<usize>, records: &[&BlockRecord]) -> Aggregate {
    let mut counts = ModeCounts::default();
    for r in records {
        match r.selected {
            Predictor::Nn => counts.nn += 1,
            Predictor::Lm => counts.lm += 1,
        }
    }
    Aggregate {
        n,
        blocks: records.len(),
        nn: mean_scores(records.iter().map(|r| &r.nn)),
        lm: mean_scores(records.iter().map(|r| &r.lm)),
        selected_mse: records.iter().map(|r| r.selected_mse()).sum::<f64>() / records.len().max(1) as f64,
        mode_counts: counts,
    }
}

/// Per-size aggregates (sizes present in `records`, ascending) followed by
/// the overall aggregate.
pub fn aggregate(records: &[BlockRecord]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for n in BLOCK_SIZES {
        let subset: Vec<&BlockRecord> = records.iter().filter(|r| r.n == n).collect();
        if !subset.is_empty() {
            out.push(aggregate_of(Some(n), &subset));
        }
    }
    let all: Vec<&BlockRecord> = records.iter().collect();
    out.push(aggregate_of(None, &all));
    out
}

/// Runs the network (clamped inference) and the linear model on every block.
pub fn evaluate(net: &ChromaNet<f32>, dataset: &[BlockSample]) -> Result<EvalReport> {
    let variant = net.config.variant;
    let format = dataset
        .first()
        .map(|s| s.format)
        .ok_or_else(|| Error::InvalidArgument("evaluation set is empty".into()))?;
    let records = dataset
        .par_iter()
        .enumerate()
        .map(|(id, s)| {
            if s.format != format {
                return Err(Error::InvalidArgument("evaluation set mixes chroma formats".into()));
            }
            let input = ModelInput::<f32>::from_sample(variant, s)?;
            let out = net.forward(&input, Mode::Inference)?;
            let nn_cb = out.data().iter().step_by(2).map(|&v| v as f64);
            let nn_cr = out.data().iter().skip(1).step_by(2).map(|&v| v as f64);
            let nn = Scores::from_mse(mse(nn_cb, &s.target_cb), mse(nn_cr, &s.target_cr));
            let (lm_cb, lm_cr) = cclm::predict_sample(s)?;
            let lm = Scores::from_mse(
                mse(lm_cb.into_iter(), &s.target_cb),
                mse(lm_cr.into_iter(), &s.target_cr),
            );
            let selected = if nn.chroma_mse() < lm.chroma_mse() {
                Predictor::Nn
            } else {
                Predictor::Lm
            };
            Ok(BlockRecord {
                id,
                n: s.n,
                origin: s.origin,
                nn,
                lm,
                selected,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregates = aggregate(&records);
    let mode_counts = aggregates.last().map(|a| a.mode_counts).unwrap_or_default();
    Ok(EvalReport {
        variant,
        chroma_format: format,
        dataset: None,
        records,
        aggregates,
        mode_counts,
    })
}
