//! Evaluation metrics: PSNR (peak 1.0) and patch-mean SSIM.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::loss::{patch_ssims, LossConfig};
use crate::tensor::Tensor;

/// `10 log10(1 / MSE)`; `+inf` for identical images.
pub fn psnr(out: &Tensor, gt: &Tensor) -> Result<f64> {
    out.same_shape(gt)?;
    if out.is_empty() {
        return Err(Error::Empty);
    }
    let mse = out
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / out.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Mean SSIM over the same tiling the training loss uses (so
/// `eval_ssim == 1 - 2 * dssim`).
pub fn eval_ssim_with(out: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let s = patch_ssims(out, gt, cfg)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

pub fn eval_ssim(out: &Tensor, gt: &Tensor) -> Result<f64> {
    eval_ssim_with(out, gt, &LossConfig::default())
}

pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// Per-image scores of the restored output and of the untouched input.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub ssim: f64,
    pub psnr: f64,
    pub input_ssim: f64,
    pub input_psnr: f64,
}

impl MetricRow {
    pub fn compute(id: impl Into<String>, out: &Tensor, input: &Tensor, gt: &Tensor) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            ssim: eval_ssim(out, gt)?,
            psnr: psnr(out, gt)?,
            input_ssim: eval_ssim(input, gt)?,
            input_psnr: psnr(input, gt)?,
        })
    }
}

/// Arithmetic mean over rows, labelled `MEAN`.
pub fn mean_row(rows: &[MetricRow]) -> MetricRow {
    let n = rows.len().max(1) as f64;
    let avg = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    MetricRow {
        id: "MEAN".into(),
        ssim: avg(|r| r.ssim),
        psnr: avg(|r| r.psnr),
        input_ssim: avg(|r| r.input_ssim),
        input_psnr: avg(|r| r.input_psnr),
    }
}

/// CSV with header `id,ssim,psnr,input_ssim,input_psnr`, one row per pair and
/// a trailing `MEAN` row.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("id,ssim,psnr,input_ssim,input_psnr\n");
    for r in rows.iter().chain(std::iter::once(&mean_row(rows))) {
        let _ = writeln!(
            s,
            "{},{:.6},{},{:.6},{}",
            r.id,
            r.ssim,
            format_db(r.psnr),
            r.input_ssim,
            format_db(r.input_psnr)
        );
    }
    s
}
