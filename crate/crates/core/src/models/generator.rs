//! Encoder / residual / decoder generator with output heads at 64, 128 and 256.

use std::fmt;

use candle_core::{Tensor, Var};

use super::layers::{join, reflect_pad, Conv2d, ConvTranspose2d, Mode, Norm, NormKind, Parameterized, ParamKind};
use crate::data::{Level, MODEL_RESOLUTION};
use crate::error::{Error, Result};

/// One token of the layer string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerToken {
    /// `C7S1-k`: 7x7 stride-1 conv, reflection padded.
    Conv7 { filters: usize },
    /// `C3-k`: 3x3 stride-2 conv.
    Down { filters: usize },
    /// `RBkxm`: `m` residual blocks of width `k`.
    Residual { filters: usize, blocks: usize },
    /// `TCk`: 3x3 stride-1/2 transposed conv.
    Up { filters: usize },
}

impl fmt::Display for LayerToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerToken::Conv7 { filters } => write!(f, "C7S1-{filters}"),
            LayerToken::Down { filters } => write!(f, "C3-{filters}"),
            LayerToken::Residual { filters, blocks } => write!(f, "RB{filters}x{blocks}"),
            LayerToken::Up { filters } => write!(f, "TC{filters}"),
        }
    }
}

impl LayerToken {
    pub fn parse(raw: &str) -> Result<LayerToken> {
        let token = raw.trim().to_ascii_uppercase().replace('×', "X");
        let bad = |reason: &str| Error::LayerSpec {
            token: raw.to_string(),
            reason: reason.to_string(),
        };
        let num = |s: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|_| bad("expected a positive integer"))
        };
        let positive = |n: usize| if n == 0 { Err(bad("filter count must be positive")) } else { Ok(n) };
        if let Some(rest) = token.strip_prefix("C7S1-") {
            Ok(LayerToken::Conv7 { filters: positive(num(rest)?)? })
        } else if let Some(rest) = token.strip_prefix("C3-") {
            Ok(LayerToken::Down { filters: positive(num(rest)?)? })
        } else if let Some(rest) = token.strip_prefix("RB") {
            let (k, m) = rest.split_once('X').ok_or_else(|| bad("expected RB<filters>x<count>"))?;
            Ok(LayerToken::Residual {
                filters: positive(num(k)?)?,
                blocks: num(m)?,
            })
        } else if let Some(rest) = token.strip_prefix("TC") {
            Ok(LayerToken::Up { filters: positive(num(rest)?)? })
        } else {
            Err(bad("unknown layer type"))
        }
    }

    fn filters(&self) -> usize {
        match *self {
            LayerToken::Conv7 { filters }
            | LayerToken::Down { filters }
            | LayerToken::Residual { filters, .. }
            | LayerToken::Up { filters } => filters,
        }
    }

    fn out_size(&self, size: usize) -> usize {
        match self {
            LayerToken::Down { .. } => size / 2,
            LayerToken::Up { .. } => size * 2,
            _ => size,
        }
    }
}

/// Where an output head reads from the trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadTap {
    pub level: Level,
    /// Index of the trunk token whose output feeds the head.
    pub after: usize,
    pub kernel: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub layers: Vec<LayerToken>,
    /// Heads for levels 64 and 128. Level 256 is the final `C7S1-3` layer.
    pub taps: Vec<HeadTap>,
    pub norm: NormKind,
}

impl GeneratorSpec {
    pub const DEFAULT_LAYERS: &'static str = "C7S1-64, C3-128, C3-256, RB256x9, TC64, TC32, C7S1-3";

    /// Parses a comma- or whitespace-separated layer string and derives the head taps:
    /// the 64 head reads the last 64x64 feature map before upsampling, the 128 head
    /// the last 128x128 map of the decoder.
    pub fn parse(layers: &str, norm: NormKind) -> Result<GeneratorSpec> {
        let tokens = layers
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(LayerToken::parse)
            .collect::<Result<Vec<_>>>()?;
        let spec_err = |reason: String| Error::LayerSpec {
            token: layers.to_string(),
            reason,
        };
        match (tokens.first(), tokens.last()) {
            (Some(LayerToken::Conv7 { .. }), Some(LayerToken::Conv7 { filters: 3 })) if tokens.len() >= 2 => {}
            _ => return Err(spec_err("must start with C7S1-k and end with C7S1-3".into())),
        }
        // channel and spatial trace
        let mut channels = 3;
        let mut size = MODEL_RESOLUTION;
        let mut sizes = Vec::with_capacity(tokens.len());
        for t in &tokens {
            if let LayerToken::Residual { filters, .. } = t {
                if *filters != channels {
                    return Err(spec_err(format!(
                        "{t} must preserve width, incoming width is {channels}"
                    )));
                }
            }
            if let LayerToken::Down { .. } = t {
                if !size.is_multiple_of(2) {
                    return Err(spec_err(format!("{t} applied to odd size {size}")));
                }
            }
            channels = t.filters();
            size = t.out_size(size);
            sizes.push(size);
        }
        if size != MODEL_RESOLUTION {
            return Err(spec_err(format!("final resolution {size}, expected {MODEL_RESOLUTION}")));
        }
        let first_up = tokens
            .iter()
            .position(|t| matches!(t, LayerToken::Up { .. }))
            .ok_or_else(|| spec_err("no upsampling layers".into()))?;
        let tap_64 = (0..first_up)
            .rev()
            .find(|&i| sizes[i] == 64)
            .ok_or_else(|| spec_err("no 64x64 feature map before upsampling".into()))?;
        let tap_128 = (first_up..tokens.len() - 1)
            .rev()
            .find(|&i| sizes[i] == 128)
            .ok_or_else(|| spec_err("no 128x128 feature map in the decoder".into()))?;
        let taps = vec![
            HeadTap { level: Level::L64, after: tap_64, kernel: 3, channels: 3 },
            HeadTap { level: Level::L128, after: tap_128, kernel: 3, channels: 3 },
        ];
        Ok(GeneratorSpec { layers: tokens, taps, norm })
    }

    pub fn layer_string(&self) -> String {
        self.layers.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", ")
    }

    /// Expected `(channels, size)` after every trunk token for a 256 input.
    pub fn trunk_trace(&self) -> Vec<(usize, usize)> {
        let mut size = MODEL_RESOLUTION;
        self.layers
            .iter()
            .map(|t| {
                size = t.out_size(size);
                (t.filters(), size)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    norm1: Norm,
    conv2: Conv2d,
    norm2: Norm,
}

impl ResBlock {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.conv1.forward(&reflect_pad(x, 1)?)?;
        let h = self.norm1.forward(&h, mode)?.relu()?;
        let h = self.conv2.forward(&reflect_pad(&h, 1)?)?;
        let h = self.norm2.forward(&h, mode)?;
        Ok((x + h)?)
    }
}

#[derive(Debug, Clone)]
enum Block {
    Conv7 { conv: Conv2d, norm: Norm },
    Output { conv: Conv2d },
    Down { conv: Conv2d, norm: Norm },
    Residual(Vec<ResBlock>),
    Up { conv: ConvTranspose2d, norm: Norm },
}

impl Block {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Block::Conv7 { conv, norm } => Ok(norm.forward(&conv.forward(&reflect_pad(x, 3)?)?, mode)?.relu()?),
            Block::Output { conv } => Ok(conv.forward(&reflect_pad(x, 3)?)?.tanh()?),
            Block::Down { conv, norm } => Ok(norm.forward(&conv.forward(x)?, mode)?.relu()?),
            Block::Residual(blocks) => {
                let mut h = x.clone();
                for b in blocks {
                    h = b.forward(&h, mode)?;
                }
                Ok(h)
            }
            Block::Up { conv, norm } => Ok(norm.forward(&conv.forward(x)?, mode)?.relu()?),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var, ParamKind)) {
        match self {
            Block::Conv7 { conv, norm } | Block::Down { conv, norm } => {
                conv.visit(&join(prefix, "conv"), f);
                norm.visit(&join(prefix, "norm"), f);
            }
            Block::Output { conv } => conv.visit(&join(prefix, "conv"), f),
            Block::Up { conv, norm } => {
                conv.visit(&join(prefix, "conv"), f);
                norm.visit(&join(prefix, "norm"), f);
            }
            Block::Residual(blocks) => {
                for (j, b) in blocks.iter().enumerate() {
                    let p = join(prefix, &j.to_string());
                    b.conv1.visit(&join(&p, "conv1"), f);
                    b.norm1.visit(&join(&p, "norm1"), f);
                    b.conv2.visit(&join(&p, "conv2"), f);
                    b.norm2.visit(&join(&p, "norm2"), f);
                }
            }
        }
    }
}

/// Synthesized images at 64, 128 and 256.
#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    pub levels: [Tensor; 3],
}

impl GeneratorOutput {
    pub fn level(&self, level: Level) -> &Tensor {
        &self.levels[level.index()]
    }

    /// The full-resolution output, which feeds the opposite generator.
    pub fn finest(&self) -> &Tensor {
        &self.levels[2]
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: GeneratorSpec,
    blocks: Vec<Block>,
    heads: Vec<(HeadTap, Conv2d)>,
}

impl Generator {
    /// Realizes `spec` with zero-valued parameters; see [`super::build_generator`].
    pub fn new(spec: &GeneratorSpec) -> Result<Generator> {
        let mut blocks = Vec::with_capacity(spec.layers.len());
        let mut cin = 3;
        let last = spec.layers.len() - 1;
        for (i, t) in spec.layers.iter().enumerate() {
            let block = match *t {
                LayerToken::Conv7 { filters } if i == last => Block::Output {
                    conv: Conv2d::new(cin, filters, 7, 1, 0, true)?,
                },
                LayerToken::Conv7 { filters } => Block::Conv7 {
                    conv: Conv2d::new(cin, filters, 7, 1, 0, false)?,
                    norm: Norm::new(spec.norm, filters)?,
                },
                LayerToken::Down { filters } => Block::Down {
                    conv: Conv2d::new(cin, filters, 3, 2, 1, false)?,
                    norm: Norm::new(spec.norm, filters)?,
                },
                LayerToken::Residual { filters, blocks } => Block::Residual(
                    (0..blocks)
                        .map(|_| {
                            Ok(ResBlock {
                                conv1: Conv2d::new(filters, filters, 3, 1, 0, false)?,
                                norm1: Norm::new(spec.norm, filters)?,
                                conv2: Conv2d::new(filters, filters, 3, 1, 0, false)?,
                                norm2: Norm::new(spec.norm, filters)?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                ),
                LayerToken::Up { filters } => Block::Up {
                    conv: ConvTranspose2d::upsample2x(cin, filters, false)?,
                    norm: Norm::new(spec.norm, filters)?,
                },
            };
            cin = t.filters();
            blocks.push(block);
        }
        let trace = spec.trunk_trace();
        let heads = spec
            .taps
            .iter()
            .map(|tap| {
                let (ch, _) = trace[tap.after];
                Ok((*tap, Conv2d::new(ch, tap.channels, tap.kernel, 1, tap.kernel / 2, true)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Generator {
            spec: spec.clone(),
            blocks,
            heads,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<GeneratorOutput> {
        Ok(self.forward_traced(x, mode)?.0)
    }

    /// Forward pass that also returns the shape after every trunk token.
    pub fn forward_traced(&self, x: &Tensor, mode: Mode) -> Result<(GeneratorOutput, Vec<Vec<usize>>)> {
        let x = match x.rank() {
            3 => x.unsqueeze(0)?,
            4 => x.clone(),
            _ => return Err(Error::Shape(format!("generator input {:?}", x.dims()))),
        };
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h != MODEL_RESOLUTION || w != MODEL_RESOLUTION {
            return Err(Error::Shape(format!(
                "generator expects Nx3x256x256 input, got {:?}",
                x.dims()
            )));
        }
        let mut outputs: [Option<Tensor>; 3] = [None, None, None];
        let mut trace = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(&h, mode)?;
            trace.push(h.dims().to_vec());
            for (tap, conv) in &self.heads {
                if tap.after == i {
                    outputs[tap.level.index()] = Some(conv.forward(&h)?.tanh()?);
                }
            }
        }
        outputs[2] = Some(h);
        let [a, b, c] = outputs;
        let missing = || Error::Shape("generator head missing".into());
        Ok((
            GeneratorOutput {
                levels: [a.ok_or_else(missing)?, b.ok_or_else(missing)?, c.ok_or_else(missing)?],
            },
            trace,
        ))
    }

    /// Parameters of one output head (64 or 128 level).
    pub fn head_parameters(&self, level: Level) -> Vec<Var> {
        self.heads
            .iter()
            .filter(|(t, _)| t.level == level)
            .flat_map(|(_, c)| {
                let mut v = vec![c.weight.clone()];
                v.extend(c.bias.clone());
                v
            })
            .collect()
    }

    /// Kernel of the first encoder convolution.
    pub fn first_conv_weight(&self) -> &Var {
        match &self.blocks[0] {
            Block::Conv7 { conv, .. } => &conv.weight,
            _ => unreachable!("spec validation guarantees a leading C7S1 layer"),
        }
    }
}

impl Parameterized for Generator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var, ParamKind)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        for (tap, conv) in &self.heads {
            conv.visit(&join(prefix, &format!("head{}", tap.level.resolution())), f);
        }
    }
}
