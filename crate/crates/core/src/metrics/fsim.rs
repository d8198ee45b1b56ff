//! Luminance FSIM: phase congruency from a log-Gabor bank combined with
//! gradient-magnitude similarity, pooled by the maximum phase congruency.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const T1: f64 = 0.85;
pub const T2: f64 = 160.0;

const NSCALE: usize = 4;
const NORIENT: usize = 4;
const MIN_WAVELENGTH: f64 = 6.0;
const MULT: f64 = 2.0;
const SIGMA_ON_F: f64 = 0.55;
const D_THETA_ON_SIGMA: f64 = 1.2;
const NOISE_K: f64 = 2.0;
const EPSILON: f64 = 1e-4;
const LOWPASS_CUTOFF: f64 = 0.45;
const LOWPASS_ORDER: i32 = 15;

/// In-place 2-D FFT on a row-major buffer. The inverse is scaled by `1/(rows*cols)`.
fn fft2(data: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    for r in data.chunks_mut(cols) {
        row_fft.process(r);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = data[r * cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            data[r * cols + c] = column[r];
        }
    }
    if inverse {
        let scale = 1.0 / (rows * cols) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Normalized frequency coordinates, centred as in a shifted spectrum.
fn freq_range(n: usize) -> Vec<f64> {
    if n % 2 == 1 {
        let half = (n as f64 - 1.0) / 2.0;
        (0..n).map(|i| (i as f64 - half) / (n as f64 - 1.0)).collect()
    } else {
        (0..n).map(|i| (i as f64 - (n / 2) as f64) / n as f64).collect()
    }
}

fn ifftshift_index(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// `(x, y)` frequency of each unshifted spectrum position.
fn frequency_grid(rows: usize, cols: usize) -> Array2<(f64, f64)> {
    let xr = freq_range(cols);
    let yr = freq_range(rows);
    Array2::from_shape_fn((rows, cols), |(r, c)| (xr[ifftshift_index(c, cols)], yr[ifftshift_index(r, rows)]))
}

fn lowpass(grid: &Array2<(f64, f64)>) -> Array2<f64> {
    grid.mapv(|(x, y)| {
        let radius = (x * x + y * y).sqrt();
        1.0 / (1.0 + (radius / LOWPASS_CUTOFF).powi(2 * LOWPASS_ORDER))
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Phase congruency map (summed over orientations) in `[0, 1]`.
pub fn phase_congruency(im: ArrayView2<f64>) -> Array2<f64> {
    let (rows, cols) = im.dim();
    let n = rows * cols;
    let theta_sigma = PI / NORIENT as f64 / D_THETA_ON_SIGMA;

    let mut spectrum: Vec<Complex64> = im.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut spectrum, rows, cols, false);

    let grid = frequency_grid(rows, cols);
    let lp = lowpass(&grid);
    let mut radius = grid.mapv(|(x, y)| (x * x + y * y).sqrt());
    radius[[0, 0]] = 1.0;
    let theta = grid.mapv(|(x, y)| (-y).atan2(x));
    let (sin_t, cos_t) = (theta.mapv(f64::sin), theta.mapv(f64::cos));

    let log_gabor: Vec<Array2<f64>> = (0..NSCALE)
        .map(|s| {
            let fo = 1.0 / (MIN_WAVELENGTH * MULT.powi(s as i32));
            let denom = 2.0 * SIGMA_ON_F.ln().powi(2);
            let mut g = &radius.mapv(|r| (-(r / fo).ln().powi(2) / denom).exp()) * &lp;
            g[[0, 0]] = 0.0;
            g
        })
        .collect();

    let mut energy_all = Array2::<f64>::zeros((rows, cols));
    let mut an_all = Array2::<f64>::zeros((rows, cols));
    for o in 0..NORIENT {
        let angle = o as f64 * PI / NORIENT as f64;
        let (ca, sa) = (angle.cos(), angle.sin());
        let spread = ndarray::Zip::from(&sin_t).and(&cos_t).map_collect(|&s, &c| {
            let ds = s * ca - c * sa;
            let dc = c * ca + s * sa;
            let dtheta = ds.atan2(dc).abs();
            (-dtheta * dtheta / (2.0 * theta_sigma * theta_sigma)).exp()
        });

        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        let mut eo: Vec<Vec<Complex64>> = Vec::with_capacity(NSCALE);
        let mut ifft_filters: Vec<Vec<f64>> = Vec::with_capacity(NSCALE);
        let mut em_n = 0.0;
        for (s, lg) in log_gabor.iter().enumerate() {
            let filter = lg * &spread;
            if s == 0 {
                em_n = filter.iter().map(|v| v * v).sum();
            }
            let mut spatial: Vec<Complex64> = filter.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft2(&mut spatial, rows, cols, true);
            let root_n = (n as f64).sqrt();
            ifft_filters.push(spatial.iter().map(|c| c.re * root_n).collect());

            let mut resp: Vec<Complex64> = spectrum.iter().zip(filter.iter()).map(|(a, &f)| a * f).collect();
            fft2(&mut resp, rows, cols, true);
            for i in 0..n {
                sum_an[i] += resp[i].norm();
                sum_e[i] += resp[i].re;
                sum_o[i] += resp[i].im;
            }
            eo.push(resp);
        }

        let mut energy = vec![0.0; n];
        for i in 0..n {
            let x_energy = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + EPSILON;
            let (mean_e, mean_o) = (sum_e[i] / x_energy, sum_o[i] / x_energy);
            for resp in &eo {
                let (e, od) = (resp[i].re, resp[i].im);
                energy[i] += e * mean_e + od * mean_o - (e * mean_o - od * mean_e).abs();
            }
        }

        // noise threshold from the smallest-scale response
        let median_e2n = median(eo[0].iter().map(|c| c.norm_sqr()).collect());
        let mean_e2n = -median_e2n / 0.5f64.ln();
        let noise_power = if em_n > 0.0 { mean_e2n / em_n } else { 0.0 };
        let mut sum_an2 = 0.0;
        let mut sum_aiaj = 0.0;
        for i in 0..n {
            for s in 0..NSCALE {
                sum_an2 += ifft_filters[s][i].powi(2);
                for t in (s + 1)..NSCALE {
                    sum_aiaj += ifft_filters[s][i] * ifft_filters[t][i];
                }
            }
        }
        let est_noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
        let tau = (est_noise_energy2 / 2.0).sqrt();
        let est_noise_energy = tau * (PI / 2.0).sqrt();
        let est_noise_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        let threshold = (est_noise_energy + NOISE_K * est_noise_sigma) / 1.7;

        for (i, (e, a)) in energy_all.iter_mut().zip(an_all.iter_mut()).enumerate() {
            *e += (energy[i] - threshold).max(0.0);
            *a += sum_an[i];
        }
    }
    ndarray::Zip::from(&energy_all)
        .and(&an_all)
        .map_collect(|&e, &a| if a > 0.0 { e / a } else { 0.0 })
}

/// Gradient magnitude with the 3x3 Scharr-like operator, zero padded.
pub fn gradient_magnitude(im: ArrayView2<f64>) -> Array2<f64> {
    const DX: [[f64; 3]; 3] = [[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]];
    let (rows, cols) = im.dim();
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
            0.0
        } else {
            im[[r as usize, c as usize]]
        }
    };
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (mut gx, mut gy) = (0.0, 0.0);
        for (i, row) in DX.iter().enumerate() {
            for (j, &k) in row.iter().enumerate() {
                let v = at(r as isize + 1 - i as isize, c as isize + 1 - j as isize);
                gx += k * v;
                // dy is the transpose of dx
                gy += DX[j][i] * v;
            }
        }
        (gx * gx + gy * gy).sqrt() / 16.0
    })
}

/// FSIM of two luminance images in `[0, 255]`.
///
/// If neither image has any phase congruency the pooling weight is zero
/// everywhere; the mean gradient similarity is returned instead.
pub fn fsim(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::Shape(format!("fsim between {:?} and {:?}", x.dim(), y.dim())));
    }
    if x.is_empty() {
        return Err(Error::Shape("fsim on an empty image".into()));
    }
    let (pc1, pc2) = (phase_congruency(x), phase_congruency(y));
    let (g1, g2) = (gradient_magnitude(x), gradient_magnitude(y));
    let mut num = 0.0;
    let mut den = 0.0;
    let mut grad_only = 0.0;
    for (((&p1, &p2), &a), &b) in pc1.iter().zip(pc2.iter()).zip(g1.iter()).zip(g2.iter()) {
        let pc_sim = (2.0 * p1 * p2 + T1) / (p1 * p1 + p2 * p2 + T1);
        let g_sim = (2.0 * a * b + T2) / (a * a + b * b + T2);
        let pcm = p1.max(p2);
        num += g_sim * pc_sim * pcm;
        den += pcm;
        grad_only += g_sim;
    }
    Ok(if den > 0.0 { num / den } else { grad_only / pc1.len() as f64 })
}
