//! Minibatch training and evaluation over image pairs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossConfig};
use crate::metrics::{eval_ssim, psnr, MetricRow};
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 1,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub loss: f64,
    pub ssim: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<EvalSummary>,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,val_ssim,val_psnr";

    pub fn csv_row(&self) -> String {
        match self.val {
            Some(v) => format!(
                "{},{:.8},{:.8},{:.6},{}",
                self.epoch,
                self.train_loss,
                v.loss,
                v.ssim,
                crate::metrics::format_db(v.psnr)
            ),
            None => format!("{},{:.8},,,", self.epoch, self.train_loss),
        }
    }
}

fn sample_loss(net: &mut Network, pair: &ImagePair, cfg: &LossConfig) -> Result<f64> {
    let pass = net.forward(&pair.rainy)?;
    if let Some(layer) = pass.first_non_finite() {
        return Err(Error::NonFinite { layer });
    }
    let loss = net.backward(&pass, &pair.clean, cfg)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite { layer: "loss".into() });
    }
    Ok(loss)
}

/// One optimizer step on a batch; gradients are averaged over the batch.
///
/// Batch items run in parallel on gradient-free replicas whose accumulators are
/// merged in batch order, so results do not depend on the thread count.
pub fn train_batch(net: &mut Network, batch: &[&ImagePair], cfg: &LossConfig) -> Result<f64> {
    net.zero_grad();
    let total = if batch.len() == 1 {
        sample_loss(net, batch[0], cfg)?
    } else {
        let template = net.clone();
        let results: Vec<Result<(Network, f64)>> = batch
            .par_iter()
            .map(|pair| {
                let mut local = template.clone();
                let loss = sample_loss(&mut local, pair, cfg)?;
                Ok((local, loss))
            })
            .collect();
        let mut total = 0.0;
        for r in results {
            let (local, loss) = r?;
            net.merge_grads(&local);
            total += loss;
        }
        total
    };
    net.scale_grads(1.0 / batch.len() as f64);
    if let Some(layer) = net.first_non_finite_param() {
        return Err(Error::NonFinite { layer });
    }
    net.step()?;
    if let Some(layer) = net.first_non_finite_param() {
        return Err(Error::NonFinite { layer });
    }
    Ok(total / batch.len() as f64)
}

/// One pass over `pairs` in a shuffled order derived from `(seed, epoch)`.
/// Returns the mean training loss.
pub fn train_epoch(net: &mut Network, pairs: &[ImagePair], cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("no training pairs".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    let mut sum = 0.0;
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<&ImagePair> = chunk.iter().map(|&i| &pairs[i]).collect();
        sum += train_batch(net, &batch, &cfg.loss)? * batch.len() as f64;
    }
    Ok(sum / pairs.len() as f64)
}

/// Mean loss / SSIM / PSNR of the network output over `pairs`.
pub fn evaluate(net: &Network, pairs: &[ImagePair], cfg: &LossConfig) -> Result<EvalSummary> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("no evaluation pairs".into()));
    }
    let scores: Vec<(f64, f64, f64)> = pairs
        .par_iter()
        .map(|p| {
            let out = net.infer(&p.rainy)?;
            Ok((total_loss(&out, &p.clean, cfg)?, eval_ssim(&out, &p.clean)?, psnr(&out, &p.clean)?))
        })
        .collect::<Result<_>>()?;
    let n = scores.len() as f64;
    Ok(EvalSummary {
        loss: scores.iter().map(|s| s.0).sum::<f64>() / n,
        ssim: scores.iter().map(|s| s.1).sum::<f64>() / n,
        psnr: scores.iter().map(|s| s.2).sum::<f64>() / n,
    })
}

/// Per-pair metric rows (output and input baselines), in input order.
pub fn metric_rows(net: &Network, pairs: &[ImagePair]) -> Result<Vec<MetricRow>> {
    pairs
        .par_iter()
        .map(|p| {
            let out = net.infer(&p.rainy)?;
            MetricRow::compute(p.id.clone(), &out, &p.rainy, &p.clean)
        })
        .collect()
}

/// Runs `cfg.epochs` epochs, invoking `on_epoch` after each.
pub fn fit(
    net: &mut Network,
    train: &[ImagePair],
    val: &[ImagePair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    let mut logs = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let epoch = net.meta.epochs as usize + 1;
        let train_loss = train_epoch(net, train, cfg, epoch)?;
        let val = if val.is_empty() {
            None
        } else {
            Some(evaluate(net, val, &cfg.loss)?)
        };
        net.meta.epochs += 1;
        net.meta.final_train_loss = Some(train_loss);
        net.meta.final_val_loss = val.map(|v| v.loss);
        let log = EpochLog { epoch, train_loss, val };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}
