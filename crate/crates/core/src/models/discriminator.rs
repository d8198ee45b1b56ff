//! PatchGAN discriminator: 4x4 conv stack, LeakyReLU(0.2), one-channel score map.

use candle_core::{Tensor, Var};

use super::layers::{join, leaky_relu, Conv2d, Mode, Norm, NormKind, Parameterized, ParamKind};
use crate::error::{Error, Result};

const KERNEL: usize = 4;
const PADDING: usize = 1;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorSpec {
    pub filters: Vec<usize>,
    pub resolution: usize,
    pub norm: NormKind,
    /// Normalization after the first conv block. Off by default.
    pub first_norm: bool,
}

impl DiscriminatorSpec {
    pub const DEFAULT_LAYERS: &'static str = "C64-C128-C256-C512";

    /// Parses `C64-C128-C256-C512` style strings (also comma separated).
    pub fn parse(layers: &str, resolution: usize, norm: NormKind) -> Result<DiscriminatorSpec> {
        let filters = layers
            .split(|c: char| c == '-' || c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                let bad = |reason: &str| Error::LayerSpec {
                    token: t.to_string(),
                    reason: reason.to_string(),
                };
                let n = t
                    .trim()
                    .strip_prefix(['C', 'c'])
                    .ok_or_else(|| bad("expected C<filters>"))?
                    .parse::<usize>()
                    .map_err(|_| bad("expected C<filters>"))?;
                if n == 0 {
                    return Err(bad("filter count must be positive"));
                }
                Ok(n)
            })
            .collect::<Result<Vec<_>>>()?;
        if filters.is_empty() {
            return Err(Error::LayerSpec {
                token: layers.to_string(),
                reason: "no layers".into(),
            });
        }
        let spec = DiscriminatorSpec {
            filters,
            resolution,
            norm,
            first_norm: false,
        };
        if spec.patch_size() == 0 {
            return Err(Error::LayerSpec {
                token: layers.to_string(),
                reason: format!("input resolution {resolution} too small"),
            });
        }
        Ok(spec)
    }

    /// Stride 2 on every block except the last, which is stride 1.
    pub fn strides(&self) -> Vec<usize> {
        let n = self.filters.len();
        (0..n).map(|i| if i + 1 == n { 1 } else { 2 }).collect()
    }

    /// Side length of the score map for this spec's input resolution.
    pub fn patch_size(&self) -> usize {
        let mut size = self.resolution as i64;
        for s in self.strides().into_iter().chain([1]) {
            let next = (size + 2 * PADDING as i64 - KERNEL as i64) / s as i64 + 1;
            if next <= 0 || size + 2 * (PADDING as i64) < KERNEL as i64 {
                return 0;
            }
            size = next;
        }
        size as usize
    }

    /// Receptive field of one score-map cell, in input pixels.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for s in self.strides().into_iter().chain([1]) {
            rf += (KERNEL - 1) * jump;
            jump *= s;
        }
        rf
    }
}

/// Logits per patch, shape `(N, 1, P, P)`.
#[derive(Debug, Clone)]
pub struct PatchScoreMap {
    pub logits: Tensor,
}

impl PatchScoreMap {
    pub fn spatial(&self) -> Result<(usize, usize)> {
        let (_, _, h, w) = self.logits.dims4()?;
        Ok((h, w))
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    blocks: Vec<(Conv2d, Option<Norm>)>,
    output: Conv2d,
}

impl Discriminator {
    pub fn new(spec: &DiscriminatorSpec) -> Result<Discriminator> {
        let mut cin = 3;
        let mut blocks = Vec::with_capacity(spec.filters.len());
        for (i, (&f, s)) in spec.filters.iter().zip(spec.strides()).enumerate() {
            let norm = if i > 0 || spec.first_norm {
                Some(Norm::new(spec.norm, f)?)
            } else {
                None
            };
            blocks.push((Conv2d::new(cin, f, KERNEL, s, PADDING, norm.is_none())?, norm));
            cin = f;
        }
        Ok(Discriminator {
            spec: spec.clone(),
            blocks,
            output: Conv2d::new(cin, 1, KERNEL, 1, PADDING, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<PatchScoreMap> {
        let (_, c, h, w) = x.dims4()?;
        let r = self.spec.resolution;
        if c != 3 || h != r || w != r {
            return Err(Error::Shape(format!(
                "discriminator for {r}x{r} given input {:?}",
                x.dims()
            )));
        }
        let mut h = x.clone();
        for (conv, norm) in &self.blocks {
            h = conv.forward(&h)?;
            if let Some(n) = norm {
                h = n.forward(&h, mode)?;
            }
            h = leaky_relu(&h, LEAKY_SLOPE)?;
        }
        Ok(PatchScoreMap {
            logits: self.output.forward(&h)?,
        })
    }
}

impl Parameterized for Discriminator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var, ParamKind)) {
        for (i, (conv, norm)) in self.blocks.iter().enumerate() {
            conv.visit(&join(prefix, &format!("blocks.{i}.conv")), f);
            if let Some(n) = norm {
                n.visit(&join(prefix, &format!("blocks.{i}.norm")), f);
            }
        }
        self.output.visit(&join(prefix, "output"), f);
    }
}
