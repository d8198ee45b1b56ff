use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 255.0;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable 'valid' filtering: output is `(h - k + 1, w - k + 1)`.
fn filter_valid(x: ArrayView2<f64>, taps: &[f64]) -> Array2<f64> {
    let k = taps.len();
    let (h, w) = x.dim();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            rows[[i, j]] = (0..k).map(|t| taps[t] * x[[i, j + t]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            out[[i, j]] = (0..k).map(|t| taps[t] * rows[[i + t, j]]).sum();
        }
    }
    out
}

/// Local SSIM map over the 'valid' region.
pub fn ssim_map(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.dim() != y.dim() {
        return Err(Error::Shape(format!("ssim between {:?} and {:?}", x.dim(), y.dim())));
    }
    let (h, w) = x.dim();
    if h < WINDOW || w < WINDOW {
        return Err(Error::Shape(format!("ssim needs at least {WINDOW}x{WINDOW}, got {h}x{w}")));
    }
    let taps = gaussian_taps(WINDOW, SIGMA);
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);
    let mu_x = filter_valid(x, &taps);
    let mu_y = filter_valid(y, &taps);
    let xx = filter_valid((&x * &x).view(), &taps);
    let yy = filter_valid((&y * &y).view(), &taps);
    let xy = filter_valid((&x * &y).view(), &taps);
    let mut map = Array2::<f64>::zeros(mu_x.dim());
    ndarray::Zip::from(&mut map)
        .and(&mu_x)
        .and(&mu_y)
        .and(&xx)
        .and(&yy)
        .and(&xy)
        .for_each(|m, &mx, &my, &sxx, &syy, &sxy| {
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            *m = ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        });
    Ok(map)
}

/// Mean SSIM of two luminance images in `[0, 255]`.
pub fn ssim(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    Ok(ssim_map(x, y)?.mean().unwrap_or(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn noise(seed: u64, h: usize, w: usize) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..255.0))
    }

    #[test]
    fn taps_are_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(t[i], t[10 - i]);
        }
    }

    #[test]
    fn self_similarity() {
        let x = noise(1, 40, 33);
        assert!((ssim(x.view(), x.view()).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inverted_noise_is_dissimilar() {
        let x = noise(2, 64, 64);
        let inv = x.mapv(|v| 255.0 - v);
        assert!(ssim(x.view(), inv.view()).unwrap() < 0.1);
    }

    #[test]
    fn shape_checks() {
        let x = noise(3, 20, 20);
        assert!(ssim(x.view(), noise(3, 20, 21).view()).is_err());
        assert!(ssim(noise(4, 8, 8).view(), noise(5, 8, 8).view()).is_err());
    }
}
