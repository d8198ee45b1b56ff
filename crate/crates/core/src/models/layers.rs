//! Minimal parameterized building blocks on top of candle's autodiff tensors.

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::direct_conv;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Batch statistics, running statistics left alone.
    TrainFrozenStats,
    /// Running statistics.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Kernel,
    Bias,
    NormScale,
    NormShift,
    /// Non-trainable state (batch-norm running statistics).
    Buffer,
}

/// Named traversal over a network's tensors.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var, ParamKind));

    /// Trainable parameters, in a stable order.
    fn parameters(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, var, kind| {
            if kind != ParamKind::Buffer {
                out.push((name, var.clone()));
            }
        });
        out
    }

    /// Parameters and buffers.
    fn state(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, var, _| out.push((name, var.clone())));
        out
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, v)| v.elem_count()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn normal_tensor(shape: &[usize], mean: f64, std: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let dist = Normal::new(mean, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| dist.sample(rng) as f32).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?)
}

/// Kernels ~ N(0, std²), norm scales ~ N(1, std²), biases and shifts zero.
pub fn init_weights<P: Parameterized + ?Sized>(net: &P, std: f64, rng: &mut impl Rng) -> Result<()> {
    let mut err = None;
    net.visit("", &mut |_, var, kind| {
        if err.is_some() {
            return;
        }
        let dims = var.dims().to_vec();
        let value = match kind {
            ParamKind::Kernel => normal_tensor(&dims, 0.0, std, rng),
            ParamKind::NormScale => normal_tensor(&dims, 1.0, std, rng),
            ParamKind::Bias | ParamKind::NormShift | ParamKind::Buffer => return,
        };
        if let Err(e) = value.and_then(|v| Ok(var.set(&v)?)) {
            err = Some(e);
        }
    });
    err.map_or(Ok(()), Err)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Result<Self> {
        Ok(Self {
            weight: Var::zeros((cout, cin, kernel, kernel), DType::F32, &Device::Cpu)?,
            bias: if bias {
                Some(Var::zeros(cout, DType::F32, &Device::Cpu)?)
            } else {
                None
            },
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.as_tensor();
        let y = if direct_conv::applicable(x, w, self.stride, self.padding) {
            direct_conv::conv2d(x, w)?
        } else {
            x.conv2d(w, self.padding, self.stride, 1, 1)?
        };
        add_channel_bias(y, self.bias.as_ref())
    }
}

impl Parameterized for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var, ParamKind)) {
        f(join(prefix, "weight"), &self.weight, ParamKind::Kernel);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b, ParamKind::Bias);
        }
    }
}

fn add_channel_bias(y: Tensor, bias: Option<&Var>) -> Result<Tensor> {
    Ok(match bias {
        Some(b) => y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?,
        None => y,
    })
}

/// 3x3, stride 2, padding 1, output padding 1: doubles the spatial size.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    /// `(in, out, k, k)`
    pub weight: Var,
    pub bias: Option<Var>,
}

impl ConvTranspose2d {
    pub fn upsample2x(cin: usize, cout: usize, bias: bool) -> Result<Self> {
        Ok(Self {
            weight: Var::zeros((cin, cout, 3, 3), DType::F32, &Device::Cpu)?,
            bias: if bias {
                Some(Var::zeros(cout, DType::F32, &Device::Cpu)?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(self.weight.as_tensor(), 1, 1, 2, 1)?;
        add_channel_bias(y, self.bias.as_ref())
    }
}

impl Parameterized for ConvTranspose2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var, ParamKind)) {
        f(join(prefix, "weight"), &self.weight, ParamKind::Kernel);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b, ParamKind::Bias);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Batch,
    Instance,
}

const NORM_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Norm {
    pub kind: NormKind,
    pub scale: Var,
    pub shift: Var,
    pub running_mean: Var,
    pub running_var: Var,
}

impl Norm {
    pub fn new(kind: NormKind, channels: usize) -> Result<Self> {
        let dev = Device::Cpu;
        Ok(Self {
            kind,
            scale: Var::ones(channels, DType::F32, &dev)?,
            shift: Var::zeros(channels, DType::F32, &dev)?,
            running_mean: Var::zeros(channels, DType::F32, &dev)?,
            running_var: Var::ones(channels, DType::F32, &dev)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.scale.dims()[0];
        let normalized = match (self.kind, mode) {
            (NormKind::Batch, Mode::Eval) => {
                let mean = self.running_mean.as_tensor().reshape((1, c, 1, 1))?;
                let var = self.running_var.as_tensor().reshape((1, c, 1, 1))?;
                x.broadcast_sub(&mean)?
                    .broadcast_div(&(var + NORM_EPS)?.sqrt()?)?
            }
            (NormKind::Batch, _) => {
                let (n, _, h, w) = x.dims4()?;
                let mean = x.mean_keepdim((0, 2, 3))?;
                let centered = x.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
                if mode == Mode::Train {
                    let count = (n * h * w) as f64;
                    let unbiased = if count > 1.0 {
                        (var.detach() * (count / (count - 1.0)))?
                    } else {
                        var.detach()
                    };
                    let m = BN_MOMENTUM;
                    let rm = ((self.running_mean.as_tensor() * (1.0 - m))?
                        + (mean.detach().flatten_all()? * m)?)?;
                    let rv = ((self.running_var.as_tensor() * (1.0 - m))?
                        + (unbiased.detach().flatten_all()? * m)?)?;
                    self.running_mean.set(&rm)?;
                    self.running_var.set(&rv)?;
                }
                centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?
            }
            (NormKind::Instance, _) => {
                let mean = x.mean_keepdim((2, 3))?;
                let centered = x.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim((2, 3))?;
                centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?
            }
        };
        Ok(normalized
            .broadcast_mul(&self.scale.as_tensor().reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.shift.as_tensor().reshape((1, c, 1, 1))?)?)
    }
}

impl Parameterized for Norm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Var, ParamKind)) {
        f(join(prefix, "scale"), &self.scale, ParamKind::NormScale);
        f(join(prefix, "shift"), &self.shift, ParamKind::NormShift);
        if self.kind == NormKind::Batch {
            f(join(prefix, "running_mean"), &self.running_mean, ParamKind::Buffer);
            f(join(prefix, "running_var"), &self.running_var, ParamKind::Buffer);
        }
    }
}

fn reflect_indices(len: usize, pad: usize) -> Vec<u32> {
    (0..len + 2 * pad)
        .map(|i| {
            let j = i as i64 - pad as i64;
            let last = len as i64 - 1;
            let r = if j < 0 {
                -j
            } else if j > last {
                2 * last - j
            } else {
                j
            };
            r as u32
        })
        .collect()
}

/// Reflection padding of the two trailing (spatial) axes.
pub fn reflect_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    let rows = Tensor::from_vec(reflect_indices(h, pad), h + 2 * pad, x.device())?;
    let cols = Tensor::from_vec(reflect_indices(w, pad), w + 2 * pad, x.device())?;
    Ok(x.index_select(&rows, 2)?.index_select(&cols, 3)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Numerically safe logistic function.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Spatial output size of a convolution.
pub fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}
