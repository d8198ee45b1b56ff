use candle_core::{Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PairedSample;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Half-width `a` of the additive uniform noise `U[-a, a]`.
    pub noise_amplitude: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            noise_amplitude: 0.02,
        }
    }
}

impl AugmentConfig {
    pub const IDENTITY: AugmentConfig = AugmentConfig {
        flip_prob: 0.0,
        noise_amplitude: 0.0,
    };
}

/// A training pair after augmentation. `target` holds the (possibly flipped)
/// clean images used as supervision; the `*_input` tensors are what the
/// generators see, with noise added.
#[derive(Debug, Clone)]
pub struct AugmentedSample {
    pub target: PairedSample,
    pub photo_input: Tensor,
    pub sketch_input: Tensor,
    pub flipped: bool,
}

/// Mirrors the last (width) axis.
pub fn hflip(t: &Tensor) -> Result<Tensor> {
    let w = t.dim(t.rank() - 1)?;
    let idx: Vec<u32> = (0..w as u32).rev().collect();
    let idx = Tensor::from_vec(idx, w, t.device())?;
    Ok(t.index_select(&idx, t.rank() - 1)?)
}

fn add_noise(t: &Tensor, amplitude: f32, rng: &mut impl Rng) -> Result<Tensor> {
    if amplitude <= 0.0 {
        return Ok(t.clone());
    }
    let noise: Vec<f32> = (0..t.elem_count())
        .map(|_| rng.random_range(-amplitude..=amplitude))
        .collect();
    let noise = Tensor::from_vec(noise, t.shape(), &Device::Cpu)?;
    Ok((t + noise)?.clamp(-1f32, 1f32)?)
}

pub fn augment(sample: &PairedSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<AugmentedSample> {
    let flipped = cfg.flip_prob > 0.0 && rng.random_bool(cfg.flip_prob.min(1.0));
    let target = if flipped {
        PairedSample {
            identity: sample.identity.clone(),
            photo: hflip(&sample.photo)?,
            sketch: hflip(&sample.sketch)?,
            split: sample.split,
        }
    } else {
        sample.clone()
    };
    let photo_input = add_noise(&target.photo, cfg.noise_amplitude, rng)?;
    let sketch_input = add_noise(&target.sketch, cfg.noise_amplitude, rng)?;
    Ok(AugmentedSample {
        target,
        photo_input,
        sketch_input,
        flipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::rng::{stream, Purpose};

    fn values(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1::<f32>().unwrap()
    }

    fn sample(seed: u64) -> PairedSample {
        let mut rng = stream(seed, Purpose::Synthetic, 0);
        let mut make = || {
            let v: Vec<f32> = (0..3 * 16 * 16).map(|_| rng.random_range(-1.0..=1.0)).collect();
            Tensor::from_vec(v, (3, 16, 16), &Device::Cpu).unwrap()
        };
        PairedSample {
            identity: "id".into(),
            photo: make(),
            sketch: make(),
            split: Split::Train,
        }
    }

    #[test]
    fn identity_config_is_identity() {
        let s = sample(1);
        let out = augment(&s, &AugmentConfig::IDENTITY, &mut stream(0, Purpose::Augment, 0)).unwrap();
        assert!(!out.flipped);
        assert_eq!(values(&out.photo_input), values(&s.photo));
        assert_eq!(values(&out.sketch_input), values(&s.sketch));
        assert_eq!(values(&out.target.sketch), values(&s.sketch));
    }

    #[test]
    fn flip_is_an_involution() {
        let s = sample(2);
        assert_eq!(values(&hflip(&hflip(&s.photo).unwrap()).unwrap()), values(&s.photo));
        assert_ne!(values(&hflip(&s.photo).unwrap()), values(&s.photo));
    }

    #[test]
    fn flips_photo_and_sketch_jointly() {
        let s = sample(3);
        let cfg = AugmentConfig { flip_prob: 0.5, noise_amplitude: 0.0 };
        let mut seen = [false; 2];
        for i in 0..32 {
            let out = augment(&s, &cfg, &mut stream(9, Purpose::Augment, i)).unwrap();
            let photo_flipped = values(&out.target.photo) == values(&hflip(&s.photo).unwrap());
            let sketch_flipped = values(&out.target.sketch) == values(&hflip(&s.sketch).unwrap());
            assert_eq!(photo_flipped, out.flipped);
            assert_eq!(sketch_flipped, out.flipped);
            seen[out.flipped as usize] = true;
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn noise_is_bounded_and_clamped() {
        let cfg = AugmentConfig { flip_prob: 0.0, noise_amplitude: 0.02 };
        for i in 0..8 {
            let s = sample(10 + i);
            let out = augment(&s, &cfg, &mut stream(4, Purpose::Augment, i)).unwrap();
            for (n, c) in values(&out.photo_input).iter().zip(values(&s.photo)) {
                assert!((n - c).abs() <= 0.02 + 1e-6);
                assert!((-1.0..=1.0).contains(n));
            }
            // targets stay clean
            assert_eq!(values(&out.target.photo), values(&s.photo));
        }
    }
}
