//! Direct-loop stride-1 convolution.
//!
//! The stock CPU backward runs a naive transposed convolution for the input
//! gradient, even for the first layer whose input is never trained, and a
//! full-image kernel correlation for the weight gradient. Here every inner
//! loop runs along one image row and the input gradient is produced only
//! when the input is tracked.

use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor};

/// Channel product up to which the direct path is used.
pub const MAX_CHANNEL_PRODUCT: usize = 128 * 128;

pub fn applicable(x: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> bool {
    let dims = kernel.dims();
    stride == 1
        && padding == 0
        && x.dtype() == DType::F32
        && kernel.dtype() == DType::F32
        && x.device().is_cpu()
        && dims.len() == 4
        && dims[0] * dims[1] <= MAX_CHANNEL_PRODUCT
}

/// `x (N, C, H, W)` correlated with `kernel (O, C, K, K)`, no padding.
pub fn conv2d(x: &Tensor, kernel: &Tensor) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op2(&kernel.contiguous()?, Forward)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(input: &[usize], kernel: &[usize]) -> candle_core::Result<Geometry> {
        let (&[n, c, h, w], &[o, kc, k, k2]) = (input, kernel) else {
            candle_core::bail!("direct conv expects rank-4 input and kernel, got {input:?} {kernel:?}")
        };
        if kc != c || k != k2 || h < k || w < k {
            candle_core::bail!("direct conv shape mismatch: input {input:?}, kernel {kernel:?}")
        }
        Ok(Geometry { n, c, h, w, o, k, ho: h - k + 1, wo: w - k + 1 })
    }
}

fn contiguous_f32<'a>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [f32]> {
    let data = s.as_slice::<f32>()?;
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("direct conv needs contiguous operands"),
    }
}

fn axpy(dst: &mut [f32], src: &[f32], a: f32) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f32>() + tail
}

fn forward(g: Geometry, x: &[f32], kernel: &[f32]) -> Vec<f32> {
    let Geometry { n, c, h, w, o, k, ho, wo } = g;
    let mut out = vec![0f32; n * o * ho * wo];
    for b in 0..n {
        for oc in 0..o {
            let plane = &mut out[(b * o + oc) * ho * wo..][..ho * wo];
            for ic in 0..c {
                let src = &x[(b * c + ic) * h * w..][..h * w];
                let wk = &kernel[(oc * c + ic) * k * k..][..k * k];
                for y in 0..ho {
                    let row = &mut plane[y * wo..][..wo];
                    for i in 0..k {
                        let line = &src[(y + i) * w..][..w];
                        for j in 0..k {
                            axpy(row, &line[j..j + wo], wk[i * k + j]);
                        }
                    }
                }
            }
        }
    }
    out
}

fn grad_input(g: Geometry, grad: &[f32], kernel: &[f32]) -> Vec<f32> {
    let Geometry { n, c, h, w, o, k, ho, wo } = g;
    let mut out = vec![0f32; n * c * h * w];
    for b in 0..n {
        for ic in 0..c {
            let plane = &mut out[(b * c + ic) * h * w..][..h * w];
            for oc in 0..o {
                let src = &grad[(b * o + oc) * ho * wo..][..ho * wo];
                let wk = &kernel[(oc * c + ic) * k * k..][..k * k];
                for y in 0..ho {
                    let g_row = &src[y * wo..][..wo];
                    for i in 0..k {
                        let line = &mut plane[(y + i) * w..][..w];
                        for j in 0..k {
                            axpy(&mut line[j..j + wo], g_row, wk[i * k + j]);
                        }
                    }
                }
            }
        }
    }
    out
}

fn grad_kernel(g: Geometry, x: &[f32], grad: &[f32]) -> Vec<f32> {
    let Geometry { n, c, h, w, o, k, ho, wo } = g;
    let mut acc = vec![0f64; o * c * k * k];
    for b in 0..n {
        for oc in 0..o {
            let src = &grad[(b * o + oc) * ho * wo..][..ho * wo];
            for ic in 0..c {
                let xs = &x[(b * c + ic) * h * w..][..h * w];
                let cell = &mut acc[(oc * c + ic) * k * k..][..k * k];
                for y in 0..ho {
                    let g_row = &src[y * wo..][..wo];
                    for i in 0..k {
                        let line = &xs[(y + i) * w..][..w];
                        for j in 0..k {
                            cell[i * k + j] += dot(g_row, &line[j..j + wo]) as f64;
                        }
                    }
                }
            }
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

struct Forward;

impl CustomOp2 for Forward {
    fn name(&self) -> &'static str {
        "direct-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = Geometry::new(l1.dims(), l2.dims())?;
        let out = forward(g, contiguous_f32(s1, l1)?, contiguous_f32(s2, l2)?);
        Ok((CpuStorage::F32(out), Shape::from((g.n, g.o, g.ho, g.wo))))
    }

    fn bwd(&self, x: &Tensor, kernel: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let gx = if x.track_op() {
            Some(grad.apply_op2_no_bwd(kernel, &GradInput { input: x.dims().to_vec() })?)
        } else {
            None
        };
        let gk = x.apply_op2_no_bwd(&grad, &GradKernel { kernel: kernel.dims().to_vec() })?;
        Ok((gx, Some(gk)))
    }
}

/// `(grad, kernel) -> d input`.
struct GradInput {
    input: Vec<usize>,
}

impl CustomOp2 for GradInput {
    fn name(&self) -> &'static str {
        "direct-conv2d-grad-input"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = Geometry::new(&self.input, l2.dims())?;
        if l1.dims() != [g.n, g.o, g.ho, g.wo] {
            candle_core::bail!("direct conv gradient shape {:?}", l1.dims())
        }
        let out = grad_input(g, contiguous_f32(s1, l1)?, contiguous_f32(s2, l2)?);
        Ok((CpuStorage::F32(out), Shape::from(self.input.as_slice())))
    }
}

/// `(input, grad) -> d kernel`.
struct GradKernel {
    kernel: Vec<usize>,
}

impl CustomOp2 for GradKernel {
    fn name(&self) -> &'static str {
        "direct-conv2d-grad-kernel"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = Geometry::new(l1.dims(), &self.kernel)?;
        if l2.dims() != [g.n, g.o, g.ho, g.wo] {
            candle_core::bail!("direct conv gradient shape {:?}", l2.dims())
        }
        let out = grad_kernel(g, contiguous_f32(s1, l1)?, contiguous_f32(s2, l2)?);
        Ok((CpuStorage::F32(out), Shape::from(self.kernel.as_slice())))
    }
}
