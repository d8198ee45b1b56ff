//! Procedurally generated face-like photo/sketch pairs in the on-disk dataset
//! layout, for smoke tests and demos.

use std::f64::consts::PI;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::Rng;

use super::{write_landmarks, LandmarkAnnotation};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

pub const PHOTO_WIDTH: u32 = 220;
pub const PHOTO_HEIGHT: u32 = 280;

#[derive(Debug, Clone)]
struct FaceParams {
    center: (f64, f64),
    axes: (f64, f64),
    tilt: f64,
    eye_gap: f64,
    eye_y: f64,
    skin: [f64; 3],
    hair: [f64; 3],
    background: [f64; 3],
    stripe_angle: f64,
    stripe_freq: f64,
    mouth_width: f64,
}

impl FaceParams {
    fn sample(index: usize, count: usize, rng: &mut impl Rng) -> Self {
        let cx = PHOTO_WIDTH as f64 / 2.0 + rng.random_range(-6.0..6.0);
        let cy = PHOTO_HEIGHT as f64 / 2.0 + rng.random_range(-6.0..6.0);
        let mut color = |lo: f64, hi: f64| [0, 1, 2].map(|_| rng.random_range(lo..hi));
        let skin = color(0.55, 0.9);
        let hair = color(0.05, 0.35);
        let background = color(0.3, 0.95);
        Self {
            center: (cx, cy),
            axes: (rng.random_range(62.0..74.0), rng.random_range(84.0..98.0)),
            tilt: rng.random_range(-6f64..6.0).to_radians(),
            eye_gap: rng.random_range(40.0..54.0),
            eye_y: rng.random_range(-22.0..-12.0),
            skin,
            hair,
            background,
            stripe_angle: PI * index as f64 / count.max(1) as f64,
            stripe_freq: 0.18 + 0.05 * (index % 4) as f64,
            mouth_width: rng.random_range(16.0..28.0),
        }
    }

    /// Face-local coordinates of the point `(x, y)`: origin at face centre, untilted.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (c, s) = (self.tilt.cos(), self.tilt.sin());
        (c * dx + s * dy, -s * dx + c * dy)
    }

    fn to_image(&self, u: f64, v: f64) -> (f64, f64) {
        let (c, s) = (self.tilt.cos(), self.tilt.sin());
        (self.center.0 + c * u - s * v, self.center.1 + s * u + c * v)
    }

    fn eyes(&self) -> ((f64, f64), (f64, f64)) {
        (
            self.to_image(-self.eye_gap / 2.0, self.eye_y),
            self.to_image(self.eye_gap / 2.0, self.eye_y),
        )
    }

    fn pixel(&self, x: f64, y: f64) -> [f64; 3] {
        let (u, v) = self.local(x, y);
        let r = (u / self.axes.0).powi(2) + (v / self.axes.1).powi(2);
        if r > 1.0 {
            // hair cap above the face
            let hair_r = (u / (self.axes.0 * 1.12)).powi(2) + ((v + 8.0) / (self.axes.1 * 1.08)).powi(2);
            if hair_r <= 1.0 && v < self.eye_y - 10.0 {
                return self.hair;
            }
            return self.background;
        }
        if v < -self.axes.1 * 0.62 {
            return self.hair;
        }
        let mut px = self.skin;
        // identity texture: oriented stripes, faint
        let (ca, sa) = (self.stripe_angle.cos(), self.stripe_angle.sin());
        let stripe = 0.06 * ((u * ca + v * sa) * self.stripe_freq).sin();
        for ch in &mut px {
            *ch += stripe;
        }
        let shade = 0.12 * r;
        for ch in &mut px {
            *ch -= shade;
        }
        for side in [-1.0, 1.0] {
            let (eu, ev) = (u - side * self.eye_gap / 2.0, v - self.eye_y);
            let e = (eu / 9.0).powi(2) + (ev / 5.0).powi(2);
            if e <= 1.0 {
                px = if e < 0.3 { [0.05; 3] } else { [0.95, 0.95, 0.95] };
            }
            let brow = (eu / 12.0).powi(2) + ((ev + 11.0) / 2.5).powi(2);
            if brow <= 1.0 {
                px = self.hair;
            }
        }
        let nose = (u / 5.0).powi(2) + ((v - 14.0) / 10.0).powi(2);
        if nose <= 1.0 {
            for ch in &mut px {
                *ch -= 0.12;
            }
        }
        let mouth = (u / self.mouth_width).powi(2) + ((v - 42.0) / 4.0).powi(2);
        if mouth <= 1.0 {
            px = [0.6, 0.2, 0.25];
        }
        px
    }
}

fn render_photo(p: &FaceParams) -> RgbImage {
    RgbImage::from_fn(PHOTO_WIDTH, PHOTO_HEIGHT, |x, y| {
        let c = p.pixel(x as f64, y as f64);
        Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Edge-filtered rendition: dark strokes on white where luminance changes.
pub fn sketch_from_photo(photo: &RgbImage) -> GrayImage {
    let (w, h) = photo.dimensions();
    let luma = |x: i64, y: i64| -> f64 {
        let x = x.clamp(0, w as i64 - 1) as u32;
        let y = y.clamp(0, h as i64 - 1) as u32;
        let p = photo.get_pixel(x, y).0;
        0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
    };
    GrayImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as i64, y as i64);
        let gx = luma(x + 1, y - 1) + 2.0 * luma(x + 1, y) + luma(x + 1, y + 1)
            - luma(x - 1, y - 1)
            - 2.0 * luma(x - 1, y)
            - luma(x - 1, y + 1);
        let gy = luma(x - 1, y + 1) + 2.0 * luma(x, y + 1) + luma(x + 1, y + 1)
            - luma(x - 1, y - 1)
            - 2.0 * luma(x, y - 1)
            - luma(x + 1, y - 1);
        let mag = (gx * gx + gy * gy).sqrt() / 4.0;
        let tone = 235.0 + 0.08 * (luma(x, y) - 128.0);
        Luma([(tone - 1.6 * mag).clamp(0.0, 255.0) as u8])
    })
}

/// Writes `count` identities (`face_000`, ...) under `root` in the standard
/// layout and returns their landmark records.
pub fn generate_dataset(root: &Path, count: usize, seed: u64) -> Result<Vec<LandmarkAnnotation>> {
    let photos = root.join("photos");
    let sketches = root.join("sketches");
    for d in [&photos, &sketches] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut annotations = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = stream(seed, Purpose::Synthetic, i as u64);
        let params = FaceParams::sample(i, count, &mut rng);
        let id = format!("face_{i:03}");
        let photo = render_photo(&params);
        let sketch = sketch_from_photo(&photo);
        let pp = photos.join(format!("{id}.png"));
        photo.save(&pp).map_err(|e| Error::image(&pp, e))?;
        let sp = sketches.join(format!("{id}.png"));
        sketch.save(&sp).map_err(|e| Error::image(&sp, e))?;
        let (l, r) = params.eyes();
        annotations.push(LandmarkAnnotation {
            image_id: id,
            left_eye: l,
            right_eye: r,
        });
    }
    let lm = root.join("landmarks.txt");
    std::fs::write(&lm, write_landmarks(&annotations)).map_err(|e| Error::io(&lm, e))?;
    Ok(annotations)
}

/// A grayscale texture unique to `index` among `count`: stripes whose
/// orientation and period are both identity-specific, in `[0, 255]`.
pub fn identity_texture(index: usize, count: usize, size: usize) -> Vec<f64> {
    let angle = PI * index as f64 / count.max(1) as f64;
    let freq = 0.35 + 0.9 * (index as f64 + 0.5) / count.max(1) as f64;
    let (c, s) = (angle.cos(), angle.sin());
    (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            let t = (x * c + y * s) * freq;
            127.5 + 100.0 * t.sin() + 20.0 * (0.5 * t).cos()
        })
        .collect()
}
