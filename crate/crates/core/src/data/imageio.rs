//! Conversions between raster images and CHW tensors in [-1, 1].

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{Rgb, Rgb32FImage, RgbImage};

use crate::error::{Error, Result};

pub const RASTER_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

pub fn is_raster(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| RASTER_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Loads any supported raster as RGB with channel values in [0, 1].
/// Grayscale inputs are replicated across the three channels.
pub fn load_rgb(path: &Path) -> Result<Rgb32FImage> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    Ok(img.to_rgb32f())
}

/// `[0,1]` RGB image to a `(3, H, W)` tensor in `[-1, 1]`.
pub fn rgb_to_tensor(img: &Rgb32FImage) -> Result<Tensor> {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px.0[c].clamp(0.0, 1.0) * 2.0 - 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (3, h as usize, w as usize), &Device::Cpu)?)
}

/// `(3, H, W)` tensor in `[-1, 1]` to a `[0,1]` RGB image.
pub fn tensor_to_rgb(t: &Tensor) -> Result<Rgb32FImage> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let plane = h * w;
    Ok(Rgb32FImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([0, 1, 2].map(|ch| ((data[ch * plane + i] + 1.0) * 0.5).clamp(0.0, 1.0)))
    }))
}

/// Maps a value in `[-1, 1]` to 8 bits with round-half-up.
pub fn quantize(v: f32) -> u8 {
    (((v as f64 + 1.0) * 127.5) + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn tensor_to_rgb8(t: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let plane = h * w;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([0, 1, 2].map(|ch| quantize(data[ch * plane + i])))
    }))
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(1.0), 255);
        // 0.0 maps to 127.5 exactly, which rounds up
        assert_eq!(quantize(0.0), 128);
        assert_eq!(quantize(-2.0), 0);
        assert_eq!(quantize(3.0), 255);
    }

    #[test]
    fn tensor_roundtrip_through_rgb() {
        let img = Rgb32FImage::from_fn(5, 4, |x, y| Rgb([x as f32 / 4.0, y as f32 / 3.0, 0.25]));
        let t = rgb_to_tensor(&img).unwrap();
        assert_eq!(t.dims(), &[3, 4, 5]);
        let back = tensor_to_rgb(&t).unwrap();
        for (a, b) in img.as_raw().iter().zip(back.as_raw()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
