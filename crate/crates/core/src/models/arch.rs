use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numkit::ParamLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Tier {
    Small,
    Medium,
    Large,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Small => "small",
            Tier::Medium => "medium",
            Tier::Large => "large",
        }
    }

    /// Family string of the zoo preset for this tier.
    pub fn preset(self) -> &'static str {
        match self {
            Tier::Small => "mlp-64",
            Tier::Medium => "conv3-32",
            Tier::Large => "conv4-64",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// Fully connected, weight `[outputs, inputs]` followed by bias `[outputs]`.
    Dense { inputs: usize, outputs: usize },
    /// 3x3 convolution, stride 1, zero padding 1; weight `[out_c, in_c * 9]`, bias `[out_c]`.
    Conv3x3 { in_c: usize, out_c: usize, height: usize, width: usize },
    Relu { size: usize },
    /// 2x2 average pooling with stride 2 over `[c, h, w]`.
    AvgPool2 { channels: usize, height: usize, width: usize },
}

impl Layer {
    pub fn input_size(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv3x3 { in_c, height, width, .. } => in_c * height * width,
            Layer::Relu { size } => size,
            Layer::AvgPool2 { channels, height, width } => channels * height * width,
        }
    }

    pub fn output_size(&self) -> usize {
        match *self {
            Layer::Dense { outputs, .. } => outputs,
            Layer::Conv3x3 { out_c, height, width, .. } => out_c * height * width,
            Layer::Relu { size } => size,
            Layer::AvgPool2 { channels, height, width } => channels * (height / 2) * (width / 2),
        }
    }

    /// `(weight_len, bias_len)` for parameterized layers.
    pub fn param_shape(&self) -> Option<(usize, usize)> {
        match *self {
            Layer::Dense { inputs, outputs } => Some((inputs * outputs, outputs)),
            Layer::Conv3x3 { in_c, out_c, .. } => Some((out_c * in_c * 9, out_c)),
            _ => None,
        }
    }
}

/// A network from the zoo: layer sequence, input shape, and parameter layout.
///
/// The canonical descriptor is `family:CxHxW:K`, e.g. `mlp-64:1x8x8:10`, and
/// doubles as the architecture id stored in parameter vectors and files.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    arch_id: String,
    family: String,
    input: (usize, usize, usize),
    num_classes: usize,
    tier: Tier,
    layers: Vec<Layer>,
    /// Offset of each layer's parameters (weight first, then bias).
    offsets: Vec<Option<usize>>,
    layout: Arc<ParamLayout>,
}

fn parse_width(s: &str, descriptor: &str) -> Result<usize> {
    s.parse::<usize>()
        .ok()
        .filter(|&w| w > 0)
        .ok_or_else(|| Error::Arch(format!("bad width in {descriptor:?}")))
}

impl ArchSpec {
    pub fn new(family: &str, input: (usize, usize, usize), num_classes: usize) -> Result<Self> {
        let (c, h, w) = input;
        if c == 0 || h == 0 || w == 0 || num_classes == 0 {
            return Err(Error::Arch(format!("degenerate input {input:?} / {num_classes} classes")));
        }
        let d = c * h * w;
        let mut layers = Vec::new();
        let tier;
        if family == "linear" {
            tier = Tier::Small;
            layers.push(Layer::Dense { inputs: d, outputs: num_classes });
        } else if let Some(width) = family.strip_prefix("mlp-") {
            let width = parse_width(width, family)?;
            tier = Tier::Small;
            layers.push(Layer::Dense { inputs: d, outputs: width });
            layers.push(Layer::Relu { size: width });
            layers.push(Layer::Dense { inputs: width, outputs: num_classes });
        } else if let Some(rest) = family.strip_prefix("conv") {
            let (depth, width) = rest
                .split_once('-')
                .ok_or_else(|| Error::Arch(format!("expected convD-W, got {family:?}")))?;
            let depth = parse_width(depth, family)?;
            let width = parse_width(width, family)?;
            tier = if depth >= 4 { Tier::Large } else { Tier::Medium };
            let (mut ch, mut hh, mut ww) = (c, h, w);
            for _ in 0..depth {
                layers.push(Layer::Conv3x3 { in_c: ch, out_c: width, height: hh, width: ww });
                ch = width;
                layers.push(Layer::Relu { size: ch * hh * ww });
                if hh >= 2 && ww >= 2 && hh % 2 == 0 && ww % 2 == 0 {
                    layers.push(Layer::AvgPool2 { channels: ch, height: hh, width: ww });
                    hh /= 2;
                    ww /= 2;
                }
            }
            layers.push(Layer::Dense { inputs: ch * hh * ww, outputs: num_classes });
        } else {
            return Err(Error::Arch(format!("unknown architecture family {family:?}")));
        }
        let arch_id = format!("{family}:{c}x{h}x{w}:{num_classes}");
        let mut blocks = Vec::new();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for (i, layer) in layers.iter().enumerate() {
            match layer.param_shape() {
                Some((wl, bl)) => {
                    offsets.push(Some(offset));
                    blocks.push((format!("{i}.weight"), wl));
                    blocks.push((format!("{i}.bias"), bl));
                    offset += wl + bl;
                }
                None => offsets.push(None),
            }
        }
        let layout = Arc::new(ParamLayout::contiguous(arch_id.clone(), &blocks));
        let spec = Self {
            arch_id,
            family: family.to_string(),
            input,
            num_classes,
            tier,
            layers,
            offsets,
            layout,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses a canonical descriptor `family:CxHxW:K`.
    pub fn parse(descriptor: &str) -> Result<Self> {
        let bad = || Error::Arch(format!("malformed descriptor {descriptor:?}"));
        let mut parts = descriptor.split(':');
        let family = parts.next().ok_or_else(bad)?;
        let shape = parts.next().ok_or_else(bad)?;
        let classes = parts.next().ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        let dims: Vec<usize> = shape
            .split('x')
            .map(|s| s.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(bad());
        }
        let k = classes.parse::<usize>().map_err(|_| bad())?;
        Self::new(family, (dims[0], dims[1], dims[2]), k)
    }

    pub fn zoo(tier: Tier, input: (usize, usize, usize), num_classes: usize) -> Result<Self> {
        Self::new(tier.preset(), input, num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        let mut size = self.input.0 * self.input.1 * self.input.2;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.input_size() != size {
                return Err(Error::Arch(format!(
                    "layer {i} expects {} inputs, previous layer yields {size}",
                    layer.input_size()
                )));
            }
            size = layer.output_size();
        }
        if size != self.num_classes {
            return Err(Error::Arch(format!("head yields {size} logits for {} classes", self.num_classes)));
        }
        Ok(())
    }

    pub fn arch_id(&self) -> &str {
        &self.arch_id
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn input_size(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn tier(&self) -> Tier {
        self.tier
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn param_offset(&self, layer: usize) -> Option<usize> {
        self.offsets[layer]
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }
}
