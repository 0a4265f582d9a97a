//! The two-path morphological network.
//!
//! Each path is a stack of dilation/erosion layers followed by a small conv
//! branch that turns the stack's final maps into a sigmoid weight map. The
//! output blends the path outputs pixelwise:
//! `I_out = (W1 * I_p1 + W2 * I_p2) / (W1 + W2)`, where path `k`'s own weight
//! map gates its own output. A path carrying `C > 1` channels outputs the
//! pixelwise mean of its final channels.

mod checkpoint;
mod spec;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load, save, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use spec::{ChannelPolicy, LayerKind, LayerSpec, NetworkSpec, MORPHON_PATH1, MORPHON_SMALL_PATH1};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convnet::{conv_backward, conv_forward, ConvLayer, ConvTape};
use crate::error::{Error, Result};
use crate::loss::{total_loss, total_loss_grad, LossConfig};
use crate::morph::{multichannel_backward, multichannel_layer, MorphKind, MorphTape, StructuringElement};
use crate::optim::{adam_step, glorot_uniform, AdamConfig, AdamState, Param};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MorphLayer {
    pub kind: MorphKind,
    pub ses: Vec<StructuringElement>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub morph: Vec<MorphLayer>,
    pub conv: Vec<ConvLayer>,
}

impl Path {
    pub fn channels(&self) -> usize {
        self.morph.last().map_or(1, |l| l.ses.len())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: u64,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    paths: Vec<Path>,
    pub optimizer: AdamState,
    seed: u64,
    pub meta: TrainingMeta,
}

/// Everything one path produced during a forward pass.
#[derive(Debug, Clone)]
pub struct PathTrace {
    /// Output of every morphological layer, in order.
    pub morph_outputs: Vec<Tensor>,
    pub morph_tapes: Vec<Vec<MorphTape>>,
    pub conv_tapes: Vec<ConvTape>,
    /// Path output `I_p` (channel mean of the last morph layer).
    pub output: Tensor,
    /// Sigmoid weight map; `None` for a single-path network.
    pub weight: Option<Tensor>,
}

impl PathTrace {
    pub fn conv_outputs(&self) -> impl Iterator<Item = &Tensor> {
        self.conv_tapes.iter().map(|t| t.output())
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub paths: Vec<PathTrace>,
    pub output: Tensor,
}

impl ForwardPass {
    /// Names the first layer whose output holds a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        for (p, trace) in self.paths.iter().enumerate() {
            for (l, out) in trace.morph_outputs.iter().enumerate() {
                if !out.is_finite() {
                    return Some(format!("path{} layer {} ({})", p + 1, l + 1, trace.morph_tapes[l][0].kind.name()));
                }
            }
            for (c, out) in trace.conv_outputs().enumerate() {
                if !out.is_finite() {
                    return Some(format!("path{} conv {}", p + 1, c + 1));
                }
            }
        }
        (!self.output.is_finite()).then(|| "output".to_string())
    }
}

fn channel_mean(t: &Tensor) -> Tensor {
    let c = t.channels();
    if c == 1 {
        return t.clone();
    }
    let mut out = Tensor::zeros(1, t.height(), t.width());
    for k in 0..c {
        for (o, v) in out.data_mut().iter_mut().zip(t.channel(k)) {
            *o += *v;
        }
    }
    out.scale(1.0 / c as f64)
}

impl Network {
    /// Allocates every parameter and draws it glorot-uniform from `seed`.
    ///
    /// Structuring elements use `fan_in = a*b`, `fan_out = elements in the
    /// layer`; conv kernels use `in*k*k` / `out*k*k`; biases start at zero.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut paths = Vec::new();
        for layers in spec.paths() {
            let mut path = Path {
                morph: Vec::new(),
                conv: Vec::new(),
            };
            let mut channels = 1;
            for l in layers {
                match l.kind.morph() {
                    Some(kind) => {
                        let fan_in = l.kernel_rows * l.kernel_cols;
                        let ses = (0..l.count)
                            .map(|_| {
                                let w = glorot_uniform(fan_in, fan_in, l.count, &mut rng);
                                StructuringElement::new(l.kernel_rows, l.kernel_cols, w)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        path.morph.push(MorphLayer { kind, ses });
                    }
                    None => {
                        let mut conv = ConvLayer::new(channels, l.count, l.kernel_rows, l.kernel_cols, l.activation);
                        let (fi, fo) = (conv.fan_in(), conv.fan_out());
                        conv.kernel = Param::new(glorot_uniform(conv.kernel.len(), fi, fo, &mut rng));
                        path.conv.push(conv);
                    }
                }
                channels = l.count;
            }
            paths.push(path);
        }
        Ok(Self {
            spec,
            paths,
            optimizer: AdamState::default(),
            seed,
            meta: TrainingMeta::default(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn paths_mut(&mut self) -> &mut [Path] {
        &mut self.paths
    }

    pub fn set_adam_config(&mut self, config: AdamConfig) -> Result<()> {
        config.validate()?;
        self.optimizer.config = config;
        Ok(())
    }

    /// Sets every structuring element weight to `value` (0 makes 1x1 layers identities).
    pub fn fill_structuring_elements(&mut self, value: f32) {
        for path in &mut self.paths {
            for layer in &mut path.morph {
                for se in &mut layer.ses {
                    se.param.value.iter_mut().for_each(|w| *w = value);
                }
            }
        }
    }

    /// Parameters in canonical order: per path, every structuring element
    /// layer by layer, then each conv layer's kernel followed by its bias.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for path in &self.paths {
            for layer in &path.morph {
                out.extend(layer.ses.iter().map(|se| &se.param));
            }
            for conv in &path.conv {
                out.push(&conv.kernel);
                out.push(&conv.bias);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for path in &mut self.paths {
            for layer in &mut path.morph {
                out.extend(layer.ses.iter_mut().map(|se| &mut se.param));
            }
            for conv in &mut path.conv {
                out.push(&mut conv.kernel);
                out.push(&mut conv.bias);
            }
        }
        out
    }

    /// Human-readable names matching [`Network::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (p, path) in self.paths.iter().enumerate() {
            for (l, layer) in path.morph.iter().enumerate() {
                for c in 0..layer.ses.len() {
                    out.push(format!("path{} layer {} ({}) element {}", p + 1, l + 1, layer.kind.name(), c + 1));
                }
            }
            for c in 0..path.conv.len() {
                out.push(format!("path{} conv {} kernel", p + 1, c + 1));
                out.push(format!("path{} conv {} bias", p + 1, c + 1));
            }
        }
        out
    }

    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Adds another replica's accumulated gradients into this network's.
    pub fn merge_grads(&mut self, other: &Network) {
        for (mine, theirs) in self.params_mut().into_iter().zip(other.params()) {
            mine.merge_grad(theirs);
        }
    }

    pub fn scale_grads(&mut self, k: f64) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g *= k);
        }
    }

    /// One Adam update of every parameter with the shared step counter.
    pub fn step(&mut self) -> Result<()> {
        let t = self.optimizer.begin_step();
        let cfg = self.optimizer.config;
        for p in self.params_mut() {
            adam_step(p, &cfg, t)?;
        }
        Ok(())
    }

    pub fn first_non_finite_param(&self) -> Option<String> {
        self.params()
            .iter()
            .zip(self.param_names())
            .find(|(p, _)| !p.is_finite())
            .map(|(_, n)| n)
    }

    fn run_path(path: &Path, image: &Tensor, with_weight: bool) -> Result<PathTrace> {
        let mut morph_outputs = Vec::with_capacity(path.morph.len());
        let mut morph_tapes = Vec::with_capacity(path.morph.len());
        let mut cur = image.clone();
        for layer in &path.morph {
            let (out, tapes) = multichannel_layer(&cur, &layer.ses, layer.kind)?;
            morph_outputs.push(out.clone());
            morph_tapes.push(tapes);
            cur = out;
        }
        let output = channel_mean(&cur);
        let mut conv_tapes = Vec::with_capacity(path.conv.len());
        let mut weight = None;
        if with_weight {
            for conv in &path.conv {
                let (out, tape) = conv_forward(&cur, conv)?;
                conv_tapes.push(tape);
                cur = out;
            }
            weight = Some(cur);
        }
        Ok(PathTrace {
            morph_outputs,
            morph_tapes,
            conv_tapes,
            output,
            weight,
        })
    }

    pub fn forward(&self, image: &Tensor) -> Result<ForwardPass> {
        if image.channels() != 1 {
            return Err(Error::NotSingleChannel(image.channels()));
        }
        let two = self.paths.len() == 2;
        let traces = self
            .paths
            .iter()
            .map(|p| Self::run_path(p, image, two))
            .collect::<Result<Vec<_>>>()?;
        let output = if two {
            let (a, b) = (&traces[0], &traces[1]);
            let (wa, wb) = (a.weight.as_ref().expect("weight"), b.weight.as_ref().expect("weight"));
            let mut out = Tensor::zeros(1, image.height(), image.width());
            for (k, o) in out.data_mut().iter_mut().enumerate() {
                let (w1, w2) = (wa.data()[k], wb.data()[k]);
                let (p1, p2) = (a.output.data()[k], b.output.data()[k]);
                // (w1 p1 + w2 p2) / (w1 + w2), exact when the paths agree
                *o = p2 + w1 * (p1 - p2) / (w1 + w2);
            }
            out
        } else {
            traces[0].output.clone()
        };
        Ok(ForwardPass { paths: traces, output })
    }

    /// Convenience: forward and return only the blended output.
    pub fn infer(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.forward(image)?.output)
    }

    /// Backpropagates `upstream = dL/dI_out` into every parameter's gradient.
    pub fn backward_from(&mut self, pass: &ForwardPass, upstream: &Tensor) -> Result<()> {
        if pass.paths.len() != self.paths.len() {
            return Err(Error::TapeMismatch(format!(
                "forward pass has {} paths, network has {}",
                pass.paths.len(),
                self.paths.len()
            )));
        }
        upstream.same_shape(&pass.output)?;

        // Gradients w.r.t. each path output and weight map.
        let mut path_grads = Vec::with_capacity(self.paths.len());
        if self.paths.len() == 2 {
            let (a, b) = (&pass.paths[0], &pass.paths[1]);
            let (wa, wb) = (a.weight.as_ref(), b.weight.as_ref());
            let (wa, wb) = match (wa, wb) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(Error::TapeMismatch("missing weight maps".into())),
            };
            let n = upstream.len();
            let (mut gp1, mut gp2) = (vec![0.0; n], vec![0.0; n]);
            let (mut gw1, mut gw2) = (vec![0.0; n], vec![0.0; n]);
            for k in 0..n {
                let g = upstream.data()[k];
                let (w1, w2) = (wa.data()[k], wb.data()[k]);
                let s = w1 + w2;
                let out = pass.output.data()[k];
                gp1[k] = g * w1 / s;
                gp2[k] = g * w2 / s;
                gw1[k] = g * (a.output.data()[k] - out) / s;
                gw2[k] = g * (b.output.data()[k] - out) / s;
            }
            let (h, w) = (upstream.height(), upstream.width());
            path_grads.push((Tensor::new(1, h, w, gp1)?, Some(Tensor::new(1, h, w, gw1)?)));
            path_grads.push((Tensor::new(1, h, w, gp2)?, Some(Tensor::new(1, h, w, gw2)?)));
        } else {
            path_grads.push((upstream.clone(), None));
        }

        for ((path, trace), (gp, gw)) in self.paths.iter_mut().zip(&pass.paths).zip(path_grads) {
            let channels = path.channels();
            let (h, w) = (gp.height(), gp.width());
            // mean over channels
            let mut g = Tensor::zeros(channels, h, w);
            let share = 1.0 / channels as f64;
            for c in 0..channels {
                for (d, s) in g.channel_mut(c).iter_mut().zip(gp.data()) {
                    *d = s * share;
                }
            }
            if let Some(gw) = gw {
                if trace.conv_tapes.len() != path.conv.len() {
                    return Err(Error::TapeMismatch("conv tapes missing".into()));
                }
                let mut gc = gw;
                for (conv, tape) in path.conv.iter_mut().zip(&trace.conv_tapes).rev() {
                    gc = conv_backward(tape, conv, &gc)?;
                }
                g.add_assign(&gc)?;
            }
            if trace.morph_tapes.len() != path.morph.len() {
                return Err(Error::TapeMismatch("morph tapes missing".into()));
            }
            for (i, (layer, tapes)) in path.morph.iter_mut().zip(&trace.morph_tapes).enumerate().rev() {
                let in_channels = if i == 0 { 1 } else { tapes.len() };
                g = multichannel_backward(tapes, &mut layer.ses, &g, in_channels)?;
            }
        }
        Ok(())
    }

    /// Computes `DSSIM + lambda * MAE` against `gt`, accumulates its gradient
    /// into every parameter and returns the loss.
    pub fn backward(&mut self, pass: &ForwardPass, gt: &Tensor, cfg: &LossConfig) -> Result<f64> {
        let loss = total_loss(&pass.output, gt, cfg)?;
        let grad = total_loss_grad(&pass.output, gt, cfg)?;
        self.backward_from(pass, &grad)?;
        Ok(loss)
    }
}
