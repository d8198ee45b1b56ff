//! Eye-based similarity alignment into the fixed crop window.

use image::{Rgb, Rgb32FImage};
use serde::{Deserialize, Serialize};

use super::LandmarkAnnotation;
use crate::error::{Error, Result};

/// Output window and the canonical eye positions inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropGeometry {
    pub width: u32,
    pub height: u32,
    pub left_eye: (f64, f64),
    pub right_eye: (f64, f64),
}

impl Default for CropGeometry {
    fn default() -> Self {
        Self {
            width: 200,
            height: 250,
            left_eye: (75.0, 125.0),
            right_eye: (125.0, 125.0),
        }
    }
}

/// `dst = [a -b; b a] * src + t`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    /// The unique rotation+scale+translation sending `src_l -> dst_l` and `src_r -> dst_r`.
    pub fn from_eyes(
        src_l: (f64, f64),
        src_r: (f64, f64),
        dst_l: (f64, f64),
        dst_r: (f64, f64),
    ) -> Option<Self> {
        let (sx, sy) = (src_r.0 - src_l.0, src_r.1 - src_l.1);
        let (dx, dy) = (dst_r.0 - dst_l.0, dst_r.1 - dst_l.1);
        let norm = sx * sx + sy * sy;
        if norm <= f64::EPSILON || !norm.is_finite() {
            return None;
        }
        // complex division d / s
        let a = (dx * sx + dy * sy) / norm;
        let b = (dy * sx - dx * sy) / norm;
        let tx = dst_l.0 - (a * src_l.0 - b * src_l.1);
        let ty = dst_l.1 - (b * src_l.0 + a * src_l.1);
        Some(Self { a, b, tx, ty })
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        (
            self.a * p.0 - self.b * p.1 + self.tx,
            self.b * p.0 + self.a * p.1 + self.ty,
        )
    }

    pub fn inverse(&self) -> Self {
        let n = self.a * self.a + self.b * self.b;
        let (ia, ib) = (self.a / n, -self.b / n);
        Self {
            a: ia,
            b: ib,
            tx: -(ia * self.tx - ib * self.ty),
            ty: -(ib * self.tx + ia * self.ty),
        }
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (self.a - 1.0).abs() <= tol
            && self.b.abs() <= tol
            && self.tx.abs() <= tol
            && self.ty.abs() <= tol
    }
}

/// Bilinear sample with edge replication.
pub fn sample_bilinear(image: &Rgb32FImage, x: f64, y: f64) -> [f32; 3] {
    let (w, h) = image.dimensions();
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as u32;
    let y0 = yc.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (xc - x0 as f64) as f32;
    let fy = (yc - y0 as f64) as f32;
    let p00 = image.get_pixel(x0, y0).0;
    let p10 = image.get_pixel(x1, y0).0;
    let p01 = image.get_pixel(x0, y1).0;
    let p11 = image.get_pixel(x1, y1).0;
    let mut out = [0f32; 3];
    for c in 0..3 {
        let top = if fx == 0.0 { p00[c] } else { p00[c] + (p10[c] - p00[c]) * fx };
        let bottom = if fx == 0.0 { p01[c] } else { p01[c] + (p11[c] - p01[c]) * fx };
        out[c] = if fy == 0.0 { top } else { top + (bottom - top) * fy };
    }
    out
}

/// Warps `image` so the annotated eye centres land on the canonical crop positions.
pub fn align_and_crop(
    image: &Rgb32FImage,
    landmarks: &LandmarkAnnotation,
    geometry: &CropGeometry,
) -> Result<Rgb32FImage> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Shape(format!("empty image for {}", landmarks.image_id)));
    }
    landmarks.validate(w, h)?;
    let transform = alignment_transform(landmarks, geometry)?;
    let inverse = transform.inverse();
    Ok(Rgb32FImage::from_fn(geometry.width, geometry.height, |x, y| {
        let src = inverse.apply((x as f64, y as f64));
        Rgb(sample_bilinear(image, src.0, src.1))
    }))
}

/// Source-to-crop transform for the given annotation.
pub fn alignment_transform(
    landmarks: &LandmarkAnnotation,
    geometry: &CropGeometry,
) -> Result<Similarity> {
    Similarity::from_eyes(
        landmarks.left_eye,
        landmarks.right_eye,
        geometry.left_eye,
        geometry.right_eye,
    )
    .ok_or_else(|| Error::InvalidLandmarks {
        identity: landmarks.image_id.clone(),
        reason: "zero inter-ocular distance".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth_image(w: u32, h: u32) -> Rgb32FImage {
        Rgb32FImage::from_fn(w, h, |x, y| {
            let (xf, yf) = (x as f32 / w as f32, y as f32 / h as f32);
            Rgb([
                0.5 + 0.4 * (6.0 * xf).sin() * (4.0 * yf).cos(),
                0.5 + 0.3 * (5.0 * yf).sin(),
                xf * 0.5 + yf * 0.4,
            ])
        })
    }

    fn lm(l: (f64, f64), r: (f64, f64)) -> LandmarkAnnotation {
        LandmarkAnnotation {
            image_id: "t".into(),
            left_eye: l,
            right_eye: r,
        }
    }

    #[test]
    fn canonical_input_is_identity() {
        let g = CropGeometry::default();
        let img = smooth_image(200, 250);
        let ann = lm(g.left_eye, g.right_eye);
        assert!(alignment_transform(&ann, &g).unwrap().is_identity(1e-12));
        let out = align_and_crop(&img, &ann, &g).unwrap();
        assert_eq!(out.dimensions(), (200, 250));
        assert_eq!(out.as_raw(), img.as_raw());
    }

    #[test]
    fn rotation_about_eye_midpoint_is_undone() {
        let g = CropGeometry::default();
        let base = smooth_image(200, 250);
        // Embed in a larger canvas, rotate 10 degrees about the eye midpoint.
        let (pad_x, pad_y) = (100.0, 100.0);
        let mid = (
            (g.left_eye.0 + g.right_eye.0) / 2.0 + pad_x,
            (g.left_eye.1 + g.right_eye.1) / 2.0 + pad_y,
        );
        let theta = 10f64.to_radians();
        let (c, s) = (theta.cos(), theta.sin());
        let rot = Similarity {
            a: c,
            b: s,
            tx: mid.0 - (c * mid.0 - s * mid.1),
            ty: mid.1 - (s * mid.0 + c * mid.1),
        };
        let inv = rot.inverse();
        let canvas = Rgb32FImage::from_fn(400, 450, |x, y| {
            let p = inv.apply((x as f64, y as f64));
            Rgb(sample_bilinear(&base, p.0 - pad_x, p.1 - pad_y))
        });
        let l = rot.apply((g.left_eye.0 + pad_x, g.left_eye.1 + pad_y));
        let r = rot.apply((g.right_eye.0 + pad_x, g.right_eye.1 + pad_y));
        let out = align_and_crop(&canvas, &lm(l, r), &g).unwrap();
        let n = out.as_raw().len() as f32;
        let mad: f32 = out
            .as_raw()
            .iter()
            .zip(base.as_raw())
            .map(|(a, b)| (a - b).abs())
            .sum::<f32>()
            / n;
        assert!(mad < 0.02, "mean abs diff {mad}");
    }

    #[test]
    fn zero_interocular_distance_is_rejected() {
        let g = CropGeometry::default();
        let ann = lm((50.0, 60.0), (50.0, 60.0));
        assert!(alignment_transform(&ann, &g).is_err());
        assert!(align_and_crop(&smooth_image(100, 100), &ann, &g).is_err());
    }

    #[test]
    fn inverse_roundtrips() {
        let t = Similarity::from_eyes((10.0, 20.0), (40.0, 25.0), (75.0, 125.0), (125.0, 125.0)).unwrap();
        let p = (33.0, -7.5);
        let q = t.inverse().apply(t.apply(p));
        assert!((p.0 - q.0).abs() < 1e-9 && (p.1 - q.1).abs() < 1e-9);
        let e = t.apply((40.0, 25.0));
        assert!((e.0 - 125.0).abs() < 1e-9 && (e.1 - 125.0).abs() < 1e-9);
    }
}
