use serde::{Deserialize, Serialize};

use super::eval::{Aggregate, EvalReport};
use crate::block::BLOCK_SIZES;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub chroma_format: String,
    /// `"4"`, `"8"`, `"16"` or `"overall"`.
    pub size: String,
    pub blocks: usize,
    pub nn_mse: Option<f64>,
    pub lm_mse: Option<f64>,
    pub selected_mse: Option<f64>,
    pub nn_psnr: Option<f64>,
    pub lm_psnr: Option<f64>,
    /// `(nn_mse - lm_mse) / lm_mse`
    pub rel_vs_lm: Option<f64>,
    /// `(nn_mse - ref_nn_mse) / ref_nn_mse`, reference = first report.
    pub rel_vs_ref: Option<f64>,
    pub nn_selected: usize,
    pub lm_selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

pub const COMPARISON_HEADER: &str = "variant,chroma_format,size,blocks,nn_mse,lm_mse,selected_mse,nn_psnr,lm_psnr,rel_vs_lm,rel_vs_ref,nn_selected,lm_selected";

fn rel(value: f64, reference: f64) -> Option<f64> {
    (reference != 0.0).then(|| (value - reference) / reference)
}

fn row(report: &EvalReport, size: String, agg: Option<&Aggregate>, reference: Option<&Aggregate>) -> ComparisonRow {
    let nn_mse = agg.map(|a| a.nn.mse);
    ComparisonRow {
        variant: report.variant.to_string(),
        chroma_format: report.chroma_format.to_string(),
        size,
        blocks: agg.map_or(0, |a| a.blocks),
        nn_mse,
        lm_mse: agg.map(|a| a.lm.mse),
        selected_mse: agg.map(|a| a.selected_mse),
        nn_psnr: agg.map(|a| 0.5 * (a.nn.psnr_cb + a.nn.psnr_cr)),
        lm_psnr: agg.map(|a| 0.5 * (a.lm.psnr_cb + a.lm.psnr_cr)),
        rel_vs_lm: agg.and_then(|a| rel(a.nn.mse, a.lm.mse)),
        rel_vs_ref: agg.zip(reference).and_then(|(a, r)| rel(a.nn.mse, r.nn.mse)),
        nn_selected: agg.map_or(0, |a| a.mode_counts.nn),
        lm_selected: agg.map_or(0, |a| a.mode_counts.lm),
    }
}

/// Per-report, per-size table. Reports must cover the same number of
/// blocks at every size.
pub fn compare(reports: &[EvalReport]) -> Result<Comparison> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to compare".into()))?;
    let hist = first.histogram();
    for r in reports {
        if r.histogram() != hist {
            return Err(Error::InvalidArgument(format!(
                "reports cover different datasets: block counts {:?} vs {:?}",
                hist,
                r.histogram()
            )));
        }
    }
    let mut rows = Vec::new();
    for r in reports {
        for n in BLOCK_SIZES {
            rows.push(row(r, n.to_string(), r.for_size(n), first.for_size(n)));
        }
        rows.push(row(r, "overall".into(), Some(r.overall()), Some(first.overall())));
    }
    Ok(Comparison { rows })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9e}")).unwrap_or_default()
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(COMPARISON_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.variant,
                r.chroma_format,
                r.size,
                r.blocks,
                cell(r.nn_mse),
                cell(r.lm_mse),
                cell(r.selected_mse),
                cell(r.nn_psnr),
                cell(r.lm_psnr),
                cell(r.rel_vs_lm),
                cell(r.rel_vs_ref),
                r.nn_selected,
                r.lm_selected,
            ));
        }
        out
    }

    /// Fixed-width text rendering for terminals.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<9} {:<4} {:>7} {:>6} {:>11} {:>11} {:>11} {:>8} {:>8} {:>9}\n",
            "variant", "fmt", "size", "blocks", "nn_mse", "lm_mse", "best_of", "nn_dB", "lm_dB", "vs_lm"
        );
        let f = |v: Option<f64>, p: usize| v.map(|x| format!("{x:.p$e}")).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            out.push_str(&format!(
                "{:<9} {:<4} {:>7} {:>6} {:>11} {:>11} {:>11} {:>8} {:>8} {:>9}\n",
                r.variant,
                r.chroma_format,
                r.size,
                r.blocks,
                f(r.nn_mse, 4),
                f(r.lm_mse, 4),
                f(r.selected_mse, 4),
                r.nn_psnr.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into()),
                r.lm_psnr.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into()),
                r.rel_vs_lm
                    .map(|x| format!("{:+.2}%", 100.0 * x))
                    .unwrap_or_else(|| "-".into()),
            ));
        }
        out
    }
}
