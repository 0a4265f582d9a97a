//! Declarative description of a (one- or two-path) morphological network.

use serde::{Deserialize, Serialize};

use crate::convnet::Activation;
use crate::error::{Error, Result};
use crate::morph::MorphKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dilation,
    Erosion,
    Conv,
}

impl LayerKind {
    pub fn morph(self) -> Option<MorphKind> {
        match self {
            LayerKind::Dilation => Some(MorphKind::Dilation),
            LayerKind::Erosion => Some(MorphKind::Erosion),
            LayerKind::Conv => None,
        }
    }
}

impl From<MorphKind> for LayerKind {
    fn from(k: MorphKind) -> Self {
        match k {
            MorphKind::Dilation => LayerKind::Dilation,
            MorphKind::Erosion => LayerKind::Erosion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Structuring elements (morph) or output feature maps (conv).
    pub count: usize,
    pub kernel_rows: usize,
    pub kernel_cols: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl LayerSpec {
    pub fn morph(kind: MorphKind, count: usize, size: usize) -> Self {
        Self {
            kind: kind.into(),
            count,
            kernel_rows: size,
            kernel_cols: size,
            activation: Activation::None,
        }
    }

    pub fn conv(count: usize, size: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Conv,
            count,
            kernel_rows: size,
            kernel_cols: size,
            activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelPolicy {
    /// The first morph layer broadcasts the input to `C` elements; later morph
    /// layers map channel `k` to channel `k`.
    #[default]
    BroadcastThenChannelwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub path1: Vec<LayerSpec>,
    /// Empty for a single-path network.
    #[serde(default)]
    pub path2: Vec<LayerSpec>,
    #[serde(default)]
    pub channel_policy: ChannelPolicy,
}

use MorphKind::{Dilation as D, Erosion as E};

/// Morph sequence of the dilation-first path of the full network.
pub const MORPHON_PATH1: [MorphKind; 9] = [D, D, E, E, D, D, E, E, E];
/// Morph sequence of the dilation-first path of the small network.
pub const MORPHON_SMALL_PATH1: [MorphKind; 10] = [D, D, D, E, E, D, D, E, E, E];

fn conv_branch(size: usize) -> [LayerSpec; 3] {
    [
        LayerSpec::conv(2, size, Activation::Tanh),
        LayerSpec::conv(3, size, Activation::Tanh),
        LayerSpec::conv(1, size, Activation::Sigmoid),
    ]
}

fn two_paths(seq: &[MorphKind], channels: usize, se_size: usize, conv_size: usize) -> NetworkSpec {
    let build = |complement: bool| {
        let mut layers: Vec<LayerSpec> = seq
            .iter()
            .map(|&k| LayerSpec::morph(if complement { k.complement() } else { k }, channels, se_size))
            .collect();
        layers.extend(conv_branch(conv_size));
        layers
    };
    NetworkSpec {
        path1: build(false),
        path2: build(true),
        channel_policy: ChannelPolicy::BroadcastThenChannelwise,
    }
}

impl NetworkSpec {
    /// Full network: nine layers of `channels` elements per path.
    pub fn morphon(channels: usize, se_size: usize, conv_size: usize) -> Self {
        two_paths(&MORPHON_PATH1, channels, se_size, conv_size)
    }

    /// Small network: ten single-element layers per path.
    pub fn morphon_small(se_size: usize, conv_size: usize) -> Self {
        two_paths(&MORPHON_SMALL_PATH1, 1, se_size, conv_size)
    }

    pub fn single_path(layers: Vec<LayerSpec>) -> Self {
        Self {
            path1: layers,
            path2: Vec::new(),
            channel_policy: ChannelPolicy::BroadcastThenChannelwise,
        }
    }

    pub fn paths(&self) -> impl Iterator<Item = &Vec<LayerSpec>> {
        std::iter::once(&self.path1).chain((!self.path2.is_empty()).then_some(&self.path2))
    }

    pub fn num_paths(&self) -> usize {
        if self.path2.is_empty() {
            1
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        let two = !self.path2.is_empty();
        for (p, layers) in self.paths().enumerate() {
            let name = format!("path{}", p + 1);
            let morph_len = layers.iter().take_while(|l| l.kind != LayerKind::Conv).count();
            if morph_len == 0 {
                return bad(format!("{name}: must start with at least one dilation/erosion layer"));
            }
            if layers[morph_len..].iter().any(|l| l.kind != LayerKind::Conv) {
                return bad(format!("{name}: morphological layers must all precede the conv branch"));
            }
            let channels = layers[0].count;
            for (i, l) in layers.iter().enumerate() {
                if l.count == 0 || l.kernel_rows == 0 || l.kernel_cols == 0 {
                    return bad(format!("{name} layer {}: counts and kernel sizes must be positive", i + 1));
                }
                if l.kind != LayerKind::Conv {
                    if l.activation != Activation::None {
                        return bad(format!("{name} layer {}: morphological layers take no activation", i + 1));
                    }
                    if l.count != channels {
                        return bad(format!(
                            "{name} layer {}: channel-wise layers need {channels} elements, got {}",
                            i + 1,
                            l.count
                        ));
                    }
                }
            }
            let conv = &layers[morph_len..];
            if two {
                match conv.last() {
                    Some(last) if last.count == 1 && last.activation == Activation::Sigmoid => {}
                    _ => {
                        return bad(format!(
                            "{name}: conv branch must end in a single sigmoid feature map"
                        ))
                    }
                }
            } else if !conv.is_empty() {
                return bad(format!("{name}: a single-path network has no weight-map branch"));
            }
        }
        if two {
            let m1: Vec<_> = self.path1.iter().filter_map(|l| l.kind.morph()).collect();
            let m2: Vec<_> = self.path2.iter().filter_map(|l| l.kind.morph()).collect();
            let complement = m1.len() == m2.len() && m1.iter().zip(&m2).all(|(a, b)| a.complement() == *b);
            if !complement {
                return bad("path2's morphological sequence must be the dilation/erosion complement of path1's".into());
            }
        }
        Ok(())
    }

    /// Parameter count implied by the spec (no network needed).
    pub fn count_parameters(&self) -> usize {
        let mut total = 0;
        for layers in self.paths() {
            let mut channels = 1;
            for l in layers {
                let area = l.kernel_rows * l.kernel_cols;
                total += match l.kind {
                    LayerKind::Conv => l.count * channels * area + l.count,
                    _ => l.count * area,
                };
                channels = l.count;
            }
        }
        total
    }
}
