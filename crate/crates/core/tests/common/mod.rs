#![allow(dead_code)]

use morphon::convnet::{conv_backward, conv_forward, Activation, ConvLayer};
use morphon::loss::{total_loss, total_loss_grad, LossConfig};
use morphon::morph::{apply, morph_backward, MorphKind, StructuringElement};
use morphon::{Network, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

pub const TOL: f64 = 1e-3;

pub fn random_tensor<R: Rng>(rng: &mut R, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(c, h, w, (0..c * h * w).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn random_se<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> StructuringElement {
    StructuringElement::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-0.3f32..0.3)).collect()).unwrap()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// One compared coordinate.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl Check {
    pub fn rel(&self) -> f64 {
        rel_err(self.analytic, self.numeric)
    }
}

#[derive(Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    /// Samples discarded because the perturbation crossed a max/min switch or an MAE kink.
    pub skipped: usize,
}

impl Report {
    pub fn worst(&self) -> f64 {
        self.checks.iter().map(Check::rel).fold(0.0, f64::max)
    }

    pub fn nonzero(&self) -> usize {
        self.checks.iter().filter(|c| c.analytic != 0.0).count()
    }

    pub fn passes(&self, min_checks: usize) -> bool {
        self.checks.len() >= min_checks && self.worst() < TOL
    }

    pub fn summary(&self) -> String {
        format!(
            "{} checks ({} nonzero, {} kink resamples), worst rel err {:.2e}",
            self.checks.len(),
            self.nonzero(),
            self.skipped,
            self.worst()
        )
    }
}

/// Perturbs an f32 parameter by +-h and returns the two stored values.
fn f32_pair(v: f32, h: f32) -> (f32, f32) {
    (v + h, v - h)
}

fn mae_signs(out: &Tensor, gt: &Tensor) -> Vec<i8> {
    out.data().iter().zip(gt.data()).map(|(o, g)| (o - g).signum() as i8).collect()
}

/// Loss and a signature of every discrete choice made by the forward pass.
fn network_eval(net: &Network, x: &Tensor, gt: &Tensor, cfg: &LossConfig) -> (f64, Vec<u32>, Vec<i8>) {
    let pass = net.forward(x).unwrap();
    let args = pass
        .paths
        .iter()
        .flat_map(|p| p.morph_tapes.iter().flatten().flat_map(|t| t.arg_index.iter().copied()))
        .collect();
    (total_loss(&pass.output, gt, cfg).unwrap(), args, mae_signs(&pass.output, gt))
}

/// Central differences on `samples` randomly chosen network parameters.
pub fn check_network<R: Rng>(
    net: &mut Network,
    x: &Tensor,
    gt: &Tensor,
    cfg: &LossConfig,
    samples: usize,
    rng: &mut R,
) -> Report {
    net.zero_grad();
    let pass = net.forward(x).unwrap();
    net.backward(&pass, gt, cfg).unwrap();
    let names = net.param_names();
    let mut coords: Vec<(usize, usize)> = net
        .params()
        .iter()
        .enumerate()
        .flat_map(|(p, param)| (0..param.len()).map(move |i| (p, i)))
        .collect();
    coords.shuffle(rng);
    let (_, base_args, base_signs) = network_eval(net, x, gt, cfg);

    let mut report = Report::default();
    let h = 1e-4f32;
    for (p, i) in coords {
        if report.checks.len() == samples {
            break;
        }
        let analytic = net.params()[p].grad[i];
        let orig = net.params()[p].value[i];
        let (up, down) = f32_pair(orig, h);
        net.params_mut()[p].value[i] = up;
        let (lp, ap, sp) = network_eval(net, x, gt, cfg);
        net.params_mut()[p].value[i] = down;
        let (lm, am, sm) = network_eval(net, x, gt, cfg);
        net.params_mut()[p].value[i] = orig;
        if ap != base_args || am != base_args || sp != base_signs || sm != base_signs {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (up as f64 - down as f64);
        report.checks.push(Check {
            name: format!("{}[{i}]", names[p]),
            analytic,
            numeric,
        });
    }
    report
}

/// Morphological layer under the linear probe `L = sum(r * out)`: checks SE weights and input pixels.
pub fn check_morph<R: Rng>(kind: MorphKind, se_rows: usize, se_cols: usize, samples: usize, rng: &mut R) -> Report {
    let x = random_tensor(rng, 1, 16, 16, 0.0, 1.0);
    let r = random_tensor(rng, 1, 16, 16, -1.0, 1.0);
    let mut se = random_se(rng, se_rows, se_cols);
    let (_, tape) = apply(&x, &se, kind).unwrap();
    let gx = morph_backward(&tape, &mut se, &r).unwrap();
    let probe = |x: &Tensor, se: &StructuringElement| {
        let (out, t) = apply(x, se, kind).unwrap();
        (out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>(), t.arg_index)
    };

    let mut report = Report::default();
    let mut se_idx: Vec<usize> = (0..se_rows * se_cols).collect();
    se_idx.shuffle(rng);
    for k in se_idx.into_iter().take(samples) {
        let orig = se.param.value[k];
        let (up, down) = f32_pair(orig, 1e-3);
        let mut s = se.clone();
        s.param.value[k] = up;
        let (lp, ap) = probe(&x, &s);
        s.param.value[k] = down;
        let (lm, am) = probe(&x, &s);
        if ap != tape.arg_index || am != tape.arg_index {
            report.skipped += 1;
            continue;
        }
        report.checks.push(Check {
            name: format!("se[{k}]"),
            analytic: se.grad()[k],
            numeric: (lp - lm) / (up as f64 - down as f64),
        });
    }
    let mut px: Vec<usize> = (0..256).collect();
    px.shuffle(rng);
    let h = 1e-6;
    for k in px.into_iter().take(samples) {
        let mut xp = x.clone();
        xp.data_mut()[k] += h;
        let (lp, ap) = probe(&xp, &se);
        let mut xm = x.clone();
        xm.data_mut()[k] -= h;
        let (lm, am) = probe(&xm, &se);
        if ap != tape.arg_index || am != tape.arg_index {
            report.skipped += 1;
            continue;
        }
        report.checks.push(Check {
            name: format!("x[{k}]"),
            analytic: gx.data()[k],
            numeric: (lp - lm) / (2.0 * h),
        });
    }
    report
}

/// Conv layer under a linear probe: checks kernel, bias and input coordinates.
pub fn check_conv<R: Rng>(
    in_c: usize,
    out_c: usize,
    k: usize,
    activation: Activation,
    samples: usize,
    rng: &mut R,
) -> Report {
    let mut layer = ConvLayer::new(in_c, out_c, k, k, activation);
    for v in layer.kernel.value.iter_mut() {
        *v = rng.gen_range(-0.3..0.3);
    }
    for v in layer.bias.value.iter_mut() {
        *v = rng.gen_range(-0.3..0.3);
    }
    let x = random_tensor(rng, in_c, 16, 16, -1.0, 1.0);
    let r = random_tensor(rng, out_c, 16, 16, -1.0, 1.0);
    let (_, tape) = conv_forward(&x, &layer).unwrap();
    let gx = conv_backward(&tape, &mut layer, &r).unwrap();
    let probe = |x: &Tensor, l: &ConvLayer| {
        let (out, _) = conv_forward(x, l).unwrap();
        out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
    };

    let mut report = Report::default();
    let h32 = 1e-3f32;
    let nk = layer.kernel.len();
    let mut kidx: Vec<usize> = (0..nk).collect();
    kidx.shuffle(rng);
    for i in kidx.into_iter().take(samples) {
        let mut l = layer.clone();
        let (up, down) = f32_pair(layer.kernel.value[i], h32);
        l.kernel.value[i] = up;
        let lp = probe(&x, &l);
        l.kernel.value[i] = down;
        let lm = probe(&x, &l);
        report.checks.push(Check {
            name: format!("kernel[{i}]"),
            analytic: layer.kernel.grad[i],
            numeric: (lp - lm) / (up as f64 - down as f64),
        });
    }
    for i in 0..out_c {
        let mut l = layer.clone();
        let (up, down) = f32_pair(layer.bias.value[i], h32);
        l.bias.value[i] = up;
        let lp = probe(&x, &l);
        l.bias.value[i] = down;
        let lm = probe(&x, &l);
        report.checks.push(Check {
            name: format!("bias[{i}]"),
            analytic: layer.bias.grad[i],
            numeric: (lp - lm) / (up as f64 - down as f64),
        });
    }
    let mut px: Vec<usize> = (0..x.len()).collect();
    px.shuffle(rng);
    let h = 1e-6;
    for i in px.into_iter().take(samples) {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        report.checks.push(Check {
            name: format!("x[{i}]"),
            analytic: gx.data()[i],
            numeric: (probe(&xp, &layer) - probe(&xm, &layer)) / (2.0 * h),
        });
    }
    report
}

/// `total_loss` gradient with respect to output pixels.
pub fn check_loss<R: Rng>(cfg: &LossConfig, samples: usize, rng: &mut R) -> Report {
    let out = random_tensor(rng, 1, 16, 16, 0.0, 1.0);
    let gt = random_tensor(rng, 1, 16, 16, 0.0, 1.0);
    let g = total_loss_grad(&out, &gt, cfg).unwrap();
    let h = 1e-6;
    let mut px: Vec<usize> = (0..out.len()).collect();
    px.shuffle(rng);
    let mut report = Report::default();
    for i in px {
        if report.checks.len() == samples {
            break;
        }
        if (out.data()[i] - gt.data()[i]).abs() < 10.0 * h {
            report.skipped += 1;
            continue;
        }
        let mut p = out.clone();
        p.data_mut()[i] += h;
        let mut m = out.clone();
        m.data_mut()[i] -= h;
        report.checks.push(Check {
            name: format!("out[{i}]"),
            analytic: g.data()[i],
            numeric: (total_loss(&p, &gt, cfg).unwrap() - total_loss(&m, &gt, cfg).unwrap()) / (2.0 * h),
        });
    }
    report
}
