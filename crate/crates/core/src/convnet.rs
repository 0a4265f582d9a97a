//! Same-size 2D cross-correlation layers with tanh/sigmoid activations.
//!
//! Stride 1, zero padding. A `k`-wide kernel is anchored at `(k-1)/2`, so an
//! 8x8 kernel pads 3 before and 4 after in each dimension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Param;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    in_channels: usize,
    out_channels: usize,
    kernel_rows: usize,
    kernel_cols: usize,
    /// `out x in x rows x cols`, row-major.
    pub kernel: Param,
    pub bias: Param,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct ConvTape {
    input: Tensor,
    output: Tensor,
}

impl ConvTape {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

impl ConvLayer {
    /// Zero-initialized layer.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_rows: usize,
        kernel_cols: usize,
        activation: Activation,
    ) -> Self {
        assert!(in_channels > 0 && out_channels > 0 && kernel_rows > 0 && kernel_cols > 0);
        Self {
            in_channels,
            out_channels,
            kernel_rows,
            kernel_cols,
            kernel: Param::zeros(out_channels * in_channels * kernel_rows * kernel_cols),
            bias: Param::zeros(out_channels),
            activation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel_shape(&self) -> (usize, usize) {
        (self.kernel_rows, self.kernel_cols)
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_rows * self.kernel_cols
    }

    pub fn fan_out(&self) -> usize {
        self.out_channels * self.kernel_rows * self.kernel_cols
    }

    pub fn num_parameters(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    #[inline]
    fn kidx(&self, o: usize, c: usize, u: usize, v: usize) -> usize {
        ((o * self.in_channels + c) * self.kernel_rows + u) * self.kernel_cols + v
    }

    pub fn zero_grad(&mut self) {
        self.kernel.zero_grad();
        self.bias.zero_grad();
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `u`.
#[inline]
fn span(len: usize, u: usize, pad: usize) -> (usize, usize) {
    // input index = out + u - pad must lie in [0, len)
    let lo = pad.saturating_sub(u);
    let hi = (len + pad).saturating_sub(u).min(len);
    (lo, hi.max(lo))
}

pub fn conv_forward(input: &Tensor, layer: &ConvLayer) -> Result<(Tensor, ConvTape)> {
    if input.channels() != layer.in_channels {
        return Err(Error::ChannelMismatch {
            expected: layer.in_channels,
            actual: input.channels(),
        });
    }
    let (h, w) = (input.height(), input.width());
    let (pt, pl) = ((layer.kernel_rows - 1) / 2, (layer.kernel_cols - 1) / 2);
    let mut out = Tensor::zeros(layer.out_channels, h, w);

    for o in 0..layer.out_channels {
        let dst = out.channel_mut(o);
        dst.iter_mut().for_each(|v| *v = layer.bias.value[o] as f64);
        for c in 0..layer.in_channels {
            let src = input.channel(c);
            for u in 0..layer.kernel_rows {
                let (x0, x1) = span(h, u, pt);
                for v in 0..layer.kernel_cols {
                    let k = layer.kernel.value[layer.kidx(o, c, u, v)] as f64;
                    if k == 0.0 {
                        continue;
                    }
                    let (y0, y1) = span(w, v, pl);
                    for x in x0..x1 {
                        let sr = (x + u - pt) * w;
                        let drow = &mut dst[x * w + y0..x * w + y1];
                        let srow = &src[sr + y0 + v - pl..sr + y1 + v - pl];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += k * s;
                        }
                    }
                }
            }
        }
        if layer.activation != Activation::None {
            for d in dst.iter_mut() {
                *d = layer.activation.apply(*d);
            }
        }
    }

    let tape = ConvTape {
        input: input.clone(),
        output: out.clone(),
    };
    Ok((out, tape))
}

/// Accumulates kernel and bias gradients and returns the input gradient.
pub fn conv_backward(tape: &ConvTape, layer: &mut ConvLayer, upstream: &Tensor) -> Result<Tensor> {
    upstream.same_shape(&tape.output)?;
    if tape.input.channels() != layer.in_channels || tape.output.channels() != layer.out_channels {
        return Err(Error::TapeMismatch(format!(
            "layer {}->{} vs tape {}->{}",
            layer.in_channels,
            layer.out_channels,
            tape.input.channels(),
            tape.output.channels()
        )));
    }
    let input = &tape.input;
    let (h, w) = (input.height(), input.width());
    let (pt, pl) = ((layer.kernel_rows - 1) / 2, (layer.kernel_cols - 1) / 2);
    let act = layer.activation;

    let dpre = tape
        .output
        .zip_map(upstream, |y, g| g * act.derivative_from_output(y))?;
    let mut input_grad = Tensor::zeros(layer.in_channels, h, w);

    for o in 0..layer.out_channels {
        let d = dpre.channel(o);
        layer.bias.grad[o] += d.iter().sum::<f64>();
        for c in 0..layer.in_channels {
            let src = input.channel(c);
            for u in 0..layer.kernel_rows {
                let (x0, x1) = span(h, u, pt);
                for v in 0..layer.kernel_cols {
                    let (y0, y1) = span(w, v, pl);
                    let ki = layer.kidx(o, c, u, v);
                    let k = layer.kernel.value[ki] as f64;
                    let mut acc = 0.0;
                    let gi = input_grad.channel_mut(c);
                    for x in x0..x1 {
                        let sr = (x + u - pt) * w;
                        let drow = &d[x * w + y0..x * w + y1];
                        let srow = &src[sr + y0 + v - pl..sr + y1 + v - pl];
                        let grow = &mut gi[sr + y0 + v - pl..sr + y1 + v - pl];
                        for ((dv, sv), gv) in drow.iter().zip(srow).zip(grow.iter_mut()) {
                            acc += dv * sv;
                            *gv += k * dv;
                        }
                    }
                    layer.kernel.grad[ki] += acc;
                }
            }
        }
    }
    Ok(input_grad)
}
