//! Model-resolution resizing and the three-level supervision pyramid.

use candle_core::Tensor;
use image::imageops::{self, FilterType};
use image::Rgb32FImage;

use super::imageio::{rgb_to_tensor, tensor_to_rgb};
use crate::error::{Error, Result};

pub const MODEL_RESOLUTION: usize = 256;

/// Supervision levels, coarse to fine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    L64,
    L128,
    L256,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::L64, Level::L128, Level::L256];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn resolution(self) -> usize {
        match self {
            Level::L64 => 64,
            Level::L128 => 128,
            Level::L256 => 256,
        }
    }

    pub fn from_resolution(r: usize) -> Option<Level> {
        Level::ALL.into_iter().find(|l| l.resolution() == r)
    }
}

/// An image at 64, 128 and 256 pixels square. Tensors are either `(3, H, W)`
/// or batched `(N, 3, H, W)`; all levels share the same rank.
#[derive(Debug, Clone)]
pub struct ResolutionPyramid {
    pub levels: [Tensor; 3],
}

impl ResolutionPyramid {
    pub fn level(&self, level: Level) -> &Tensor {
        &self.levels[level.index()]
    }

    /// Stacks per-sample pyramids into a batched one.
    pub fn stack(items: &[ResolutionPyramid]) -> Result<ResolutionPyramid> {
        let gather = |i: usize| -> Result<Tensor> {
            let ts: Vec<&Tensor> = items.iter().map(|p| &p.levels[i]).collect();
            Ok(Tensor::stack(&ts, 0)?)
        };
        Ok(ResolutionPyramid {
            levels: [gather(0)?, gather(1)?, gather(2)?],
        })
    }
}

/// Anisotropic bicubic resize of a cropped `[0,1]` image to a `(3, 256, 256)` tensor in `[-1, 1]`.
pub fn to_model_resolution(image: &Rgb32FImage) -> Result<Tensor> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Shape("empty image".into()));
    }
    let n = MODEL_RESOLUTION as u32;
    let resized = if (w, h) == (n, n) {
        image.clone()
    } else {
        imageops::resize(image, n, n, FilterType::CatmullRom)
    };
    rgb_to_tensor(&resized)
}

/// Antialiased bicubic downsample of a single `(3, S, S)` tensor to `res`.
fn downsample(t: &Tensor, res: usize) -> Result<Tensor> {
    let img = tensor_to_rgb(t)?;
    let small = imageops::resize(&img, res as u32, res as u32, FilterType::CatmullRom);
    rgb_to_tensor(&small)
}

/// Builds the pyramid from a 256-level image. Level 3 is the input itself;
/// levels 1 and 2 are each downsampled directly from it.
pub fn make_pyramid(image: &Tensor) -> Result<ResolutionPyramid> {
    match image.rank() {
        3 => {
            let (c, h, w) = image.dims3()?;
            if c != 3 || h != MODEL_RESOLUTION || w != MODEL_RESOLUTION {
                return Err(Error::Shape(format!(
                    "pyramid input must be 3x256x256, got {:?}",
                    image.dims()
                )));
            }
            Ok(ResolutionPyramid {
                levels: [
                    downsample(image, 64)?,
                    downsample(image, 128)?,
                    image.clone(),
                ],
            })
        }
        4 => {
            let n = image.dim(0)?;
            let items = (0..n)
                .map(|i| make_pyramid(&image.get(i)?))
                .collect::<Result<Vec<_>>>()?;
            ResolutionPyramid::stack(&items)
        }
        _ => Err(Error::Shape(format!(
            "pyramid input must be rank 3 or 4, got {:?}",
            image.dims()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use image::Rgb;

    fn values(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1::<f32>().unwrap()
    }

    #[test]
    fn constant_images_map_to_expected_values() {
        for (v, expected) in [(128u8, 128.0 / 127.5 - 1.0), (0, -1.0), (255, 1.0)] {
            let img = Rgb32FImage::from_pixel(200, 250, Rgb([v as f32 / 255.0; 3]));
            let t = to_model_resolution(&img).unwrap();
            assert_eq!(t.dims(), &[3, 256, 256]);
            for x in values(&t) {
                assert!((x - expected as f32).abs() < 1e-5, "{x} vs {expected}");
            }
        }
    }

    #[test]
    fn constant_pyramid_is_constant() {
        for c in [-1.0f32, -0.3, 0.0, 0.77, 1.0] {
            let t = Tensor::full(c, (3, 256, 256), &Device::Cpu).unwrap();
            let p = make_pyramid(&t).unwrap();
            assert_eq!(p.levels[0].dims(), &[3, 64, 64]);
            assert_eq!(p.levels[1].dims(), &[3, 128, 128]);
            for lvl in &p.levels {
                for x in values(lvl) {
                    assert!((x - c).abs() <= 1e-6, "{x} vs {c}");
                }
            }
        }
    }

    #[test]
    fn top_level_is_exact_copy() {
        let t = Tensor::rand(-1f32, 1f32, (3, 256, 256), &Device::Cpu).unwrap();
        let p = make_pyramid(&t).unwrap();
        assert_eq!(values(&p.levels[2]), values(&t));
        // idempotent for a fixed input
        let q = make_pyramid(&t).unwrap();
        assert_eq!(values(&p.levels[0]), values(&q.levels[0]));
    }

    #[test]
    fn checkerboard_averages_out_at_64() {
        let data: Vec<f32> = (0..3 * 256 * 256)
            .map(|i| {
                let (y, x) = ((i / 256) % 256, i % 256);
                if (x + y) % 2 == 0 { 1.0 } else { -1.0 }
            })
            .collect();
        let t = Tensor::from_vec(data, (3, 256, 256), &Device::Cpu).unwrap();
        let v = values(&make_pyramid(&t).unwrap().levels[0]);
        let mean = v.iter().sum::<f32>() / v.len() as f32;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f32>() / v.len() as f32;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!(var < 0.01, "variance {var}");
    }

    #[test]
    fn batched_pyramid_matches_per_sample() {
        let a = Tensor::rand(-1f32, 1f32, (3, 256, 256), &Device::Cpu).unwrap();
        let b = Tensor::rand(-1f32, 1f32, (3, 256, 256), &Device::Cpu).unwrap();
        let batch = Tensor::stack(&[&a, &b], 0).unwrap();
        let p = make_pyramid(&batch).unwrap();
        assert_eq!(p.levels[0].dims(), &[2, 3, 64, 64]);
        let pb = make_pyramid(&b).unwrap();
        assert_eq!(values(&p.levels[1].get(1).unwrap()), values(&pb.levels[1]));
    }
}
