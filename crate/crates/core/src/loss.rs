//! SSIM, patchwise DSSIM, MAE and the combined training objective
//! `DSSIM + lambda * MAE`, with its analytic gradient.
//!
//! SSIM statistics are whole-patch population statistics. Images are tiled into
//! non-overlapping `patch_size x patch_size` patches; trailing partial tiles are
//! kept as smaller patches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{covariance, mean, variance, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub c1: f64,
    pub c2: f64,
    pub patch_size: usize,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            c1: 0.0001,
            c2: 0.0009,
            patch_size: 100,
            lambda: 1.0,
        }
    }
}

impl LossConfig {
    pub fn with_patch_size(mut self, patch_size: usize) -> Self {
        self.patch_size = patch_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.patch_size >= 2 && self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("bad loss config {self:?}")));
        }
        Ok(())
    }
}

/// A rectangular tile `[row, row+height) x [col, col+width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Non-overlapping tiling of an `h x w` plane, row-major, partial tiles last in
/// each row/column.
pub fn patches(h: usize, w: usize, patch_size: usize) -> Vec<Patch> {
    let step = patch_size.max(1);
    let mut out = Vec::new();
    let mut row = 0;
    while row < h {
        let ph = step.min(h - row);
        let mut col = 0;
        while col < w {
            let pw = step.min(w - col);
            out.push(Patch {
                row,
                col,
                height: ph,
                width: pw,
            });
            col += pw;
        }
        row += ph;
    }
    out
}

fn gather(t: &Tensor, p: &Patch) -> Vec<f64> {
    let mut v = Vec::with_capacity(t.channels() * p.height * p.width);
    for c in 0..t.channels() {
        let plane = t.channel(c);
        for r in p.row..p.row + p.height {
            let s = r * t.width() + p.col;
            v.extend_from_slice(&plane[s..s + p.width]);
        }
    }
    v
}

struct SsimTerms {
    mu_x: f64,
    mu_y: f64,
    a1: f64,
    a2: f64,
    b1: f64,
    b2: f64,
}

impl SsimTerms {
    fn new(x: &[f64], y: &[f64], cfg: &LossConfig) -> Result<Self> {
        let mu_x = mean(x)?;
        let mu_y = mean(y)?;
        let var_x = variance(x)?;
        let var_y = variance(y)?;
        let cov = covariance(x, y)?;
        Ok(Self {
            mu_x,
            mu_y,
            a1: 2.0 * mu_x * mu_y + cfg.c1,
            a2: 2.0 * cov + cfg.c2,
            b1: mu_x * mu_x + mu_y * mu_y + cfg.c1,
            b2: var_x + var_y + cfg.c2,
        })
    }

    fn value(&self) -> f64 {
        (self.a1 * self.a2) / (self.b1 * self.b2)
    }
}

fn ssim_slices(x: &[f64], y: &[f64], cfg: &LossConfig) -> Result<f64> {
    Ok(SsimTerms::new(x, y, cfg)?.value())
}

/// SSIM of two equally shaped patches using whole-patch statistics.
pub fn ssim(x: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<f64> {
    x.same_shape(y)?;
    ssim_slices(x.data(), y.data(), cfg)
}

/// SSIM of every tile, in [`patches`] order.
pub fn patch_ssims(out: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<Vec<f64>> {
    out.same_shape(gt)?;
    if out.is_empty() {
        return Err(Error::Empty);
    }
    patches(out.height(), out.width(), cfg.patch_size)
        .iter()
        .map(|p| ssim_slices(&gather(out, p), &gather(gt, p), cfg))
        .collect()
}

/// `(1/M) * sum_i (1 - SSIM(P_out^i, P_gt^i)) / 2`.
pub fn dssim(out: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let s = patch_ssims(out, gt, cfg)?;
    Ok(s.iter().map(|v| (1.0 - v) / 2.0).sum::<f64>() / s.len() as f64)
}

/// Mean absolute error over all pixels.
pub fn mae(out: &Tensor, gt: &Tensor) -> Result<f64> {
    out.same_shape(gt)?;
    if out.is_empty() {
        return Err(Error::Empty);
    }
    let s: f64 = out.data().iter().zip(gt.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / out.len() as f64)
}

pub fn total_loss(out: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<f64> {
    Ok(dssim(out, gt, cfg)? + cfg.lambda * mae(out, gt)?)
}

/// `d total_loss / d out`, pixelwise.
///
/// Per patch of `n` pixels with `S = A1*A2 / (B1*B2)`:
/// `dS/dx_k = 2/(n*B1*B2) * (mu_y*A2 + A1*(y_k - mu_y) - S*(mu_x*B2 + B1*(x_k - mu_x)))`.
/// The MAE subgradient at zero is taken as zero.
pub fn total_loss_grad(out: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    out.same_shape(gt)?;
    if out.is_empty() {
        return Err(Error::Empty);
    }
    let tiles = patches(out.height(), out.width(), cfg.patch_size);
    let m = tiles.len() as f64;
    let n_total = out.len() as f64;
    let w = out.width();
    let plane = out.plane_len();
    let mut grad = Tensor::zeros(out.channels(), out.height(), w);

    for p in &tiles {
        let xs = gather(out, p);
        let ys = gather(gt, p);
        let t = SsimTerms::new(&xs, &ys, cfg)?;
        let s = t.value();
        let n = xs.len() as f64;
        let scale = -(1.0 / (2.0 * m)) * 2.0 / (n * t.b1 * t.b2);
        let mut k = 0;
        for c in 0..out.channels() {
            for r in p.row..p.row + p.height {
                for col in p.col..p.col + p.width {
                    let (x, y) = (xs[k], ys[k]);
                    let ds = t.mu_y * t.a2 + t.a1 * (y - t.mu_y) - s * (t.mu_x * t.b2 + t.b1 * (x - t.mu_x));
                    grad.data_mut()[c * plane + r * w + col] = scale * ds;
                    k += 1;
                }
            }
        }
    }

    let mae_scale = cfg.lambda / n_total;
    for ((g, &x), &y) in grad.data_mut().iter_mut().zip(out.data()).zip(gt.data()) {
        let d = x - y;
        if d > 0.0 {
            *g += mae_scale;
        } else if d < 0.0 {
            *g -= mae_scale;
        }
    }
    Ok(grad)
}
