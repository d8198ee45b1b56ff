//! Image quality (SSIM, FSIM) and LBP-based cross-modal matching.

pub mod cmc;
pub mod fsim;
pub mod lbp;
pub mod ssim;

use std::path::Path;

use candle_core::Tensor;
use ndarray::{Array2, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

pub use cmc::{cmc, cosine_distance, CmcCurve, Labeled};
pub use fsim::fsim;
pub use lbp::{lbp_features, LbpConfig};
pub use ssim::ssim;

use crate::data::{imageio, DatasetSplit};
use crate::error::{Error, Result};
use crate::models::{CycleModel, Direction, Mode};
use crate::synthesis::csv_error;

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// `[metrics]` section of the run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub lbp: LbpConfig,
}

/// Weighted sum of the RGB planes of a `(3, H, W)` array.
pub fn to_luma(rgb: ArrayView3<f64>) -> Array2<f64> {
    let (_, h, w) = rgb.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        LUMA_WEIGHTS[0] * rgb[[0, r, c]] + LUMA_WEIGHTS[1] * rgb[[1, r, c]] + LUMA_WEIGHTS[2] * rgb[[2, r, c]]
    })
}

pub fn gray_to_rgb(gray: &Array2<f64>) -> Array3<f64> {
    let (h, w) = gray.dim();
    Array3::from_shape_fn((3, h, w), |(_, r, c)| gray[[r, c]])
}

/// Luminance in `[0, 255]` of a `(3, H, W)` tensor in `[-1, 1]`, after
/// 8-bit quantization, i.e. exactly what a saved PNG would measure.
pub fn tensor_luma(t: &Tensor) -> Result<Array2<f64>> {
    let img = imageio::tensor_to_rgb8(t)?;
    let (w, h) = img.dimensions();
    let rgb = Array3::from_shape_fn((3, h as usize, w as usize), |(ch, r, c)| {
        img.get_pixel(c as u32, r as u32)[ch] as f64
    });
    Ok(to_luma(rgb.view()))
}

#[derive(Debug, Clone, Serialize)]
pub struct IqaRow {
    pub image_id: String,
    pub ssim: f64,
    pub fsim: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IqaReport {
    pub direction: Direction,
    pub rows: Vec<IqaRow>,
}

impl IqaReport {
    pub fn label(&self) -> &'static str {
        self.direction.synthesis_label()
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim))
    }

    pub fn mean_fsim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.fsim))
    }
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else {
        v.sum::<f64>() / n as f64
    }
}

/// The two matching protocols: synthesized sketches against the real-sketch
/// gallery, and synthesized photos against the real-photo gallery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    SketchMatching,
    PhotoMatching,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::SketchMatching => "sketch_matching",
            Protocol::PhotoMatching => "photo_matching",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Protocol::SketchMatching => Direction::PhotoToSketch,
            Protocol::PhotoMatching => Direction::SketchToPhoto,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    /// Sketch synthesis (photo2sketch) then photo synthesis.
    pub iqa: [IqaReport; 2],
    pub matching: [(Protocol, CmcCurve); 2],
}

/// Published numbers on CUHK and CUFSF, for comparison against a full run.
pub mod reference {
    #[derive(Debug, Clone, Copy)]
    pub struct Iqa {
        pub config: &'static str,
        pub ssim_photo: f64,
        pub ssim_sketch: f64,
        pub fsim_photo: f64,
        pub fsim_sketch: f64,
    }

    /// Discriminator-level ablation on CUHK.
    pub const CUHK_ABLATION: [Iqa; 3] = [
        Iqa { config: "C-D256", ssim_photo: 0.7626, ssim_sketch: 0.5991, fsim_photo: 0.7826, fsim_sketch: 0.7271 },
        Iqa { config: "C-D256,128", ssim_photo: 0.7851, ssim_sketch: 0.6034, fsim_photo: 0.7920, fsim_sketch: 0.7280 },
        Iqa { config: "C-D256,128,64", ssim_photo: 0.7915, ssim_sketch: 0.6156, fsim_photo: 0.8062, fsim_sketch: 0.7361 },
    ];

    pub const CUHK_FULL: Iqa = CUHK_ABLATION[2];

    /// Absolute SSIM tolerance for accepting a full CUHK reproduction.
    pub const SSIM_TOLERANCE: f64 = 0.05;

    /// Rank-1 matching rates in percent: `(dataset, photo matching, sketch matching)`.
    pub const RANK1: [(&str, f64, f64); 2] = [("cuhk", 100.0, 99.0), ("cufsf", 47.0, 51.0)];
}

fn synthesize(model: &CycleModel, direction: Direction, input: &Tensor) -> Result<Tensor> {
    let out = model.generator(direction).forward(input, Mode::Eval)?;
    Ok(out.finest().squeeze(0)?)
}

/// Synthesizes both directions for every test pair and scores them.
pub fn evaluate_run(model: &CycleModel, test: &DatasetSplit, cfg: &MetricsConfig) -> Result<Evaluation> {
    let mut iqa = [
        IqaReport { direction: Direction::PhotoToSketch, rows: Vec::new() },
        IqaReport { direction: Direction::SketchToPhoto, rows: Vec::new() },
    ];
    // [sketch protocol, photo protocol] x (probes, gallery)
    let mut probes: [Vec<Labeled>; 2] = [Vec::new(), Vec::new()];
    let mut gallery: [Vec<Labeled>; 2] = [Vec::new(), Vec::new()];
    for sample in &test.samples {
        for (k, (direction, input, target)) in [
            (Direction::PhotoToSketch, &sample.photo, &sample.sketch),
            (Direction::SketchToPhoto, &sample.sketch, &sample.photo),
        ]
        .into_iter()
        .enumerate()
        {
            let fake = tensor_luma(&synthesize(model, direction, input)?)?;
            let real = tensor_luma(target)?;
            iqa[k].rows.push(IqaRow {
                image_id: sample.identity.clone(),
                ssim: ssim(fake.view(), real.view())?,
                fsim: fsim(fake.view(), real.view())?,
            });
            probes[k].push(Labeled {
                identity: sample.identity.clone(),
                features: lbp_features(fake.view(), &cfg.lbp),
            });
            gallery[k].push(Labeled {
                identity: sample.identity.clone(),
                features: lbp_features(real.view(), &cfg.lbp),
            });
        }
        log::debug!("evaluated {}", sample.identity);
    }
    Ok(Evaluation {
        iqa,
        matching: [
            (Protocol::SketchMatching, cmc(&probes[0], &gallery[0])?),
            (Protocol::PhotoMatching, cmc(&probes[1], &gallery[1])?),
        ],
    })
}

impl Evaluation {
    pub fn iqa_for(&self, direction: Direction) -> &IqaReport {
        self.iqa.iter().find(|r| r.direction == direction).expect("both directions")
    }

    /// `(metric, value)` rows; rates are fractions in `[0, 1]`.
    pub fn summary(&self) -> Vec<(String, f64)> {
        let mut rows = Vec::new();
        for r in &self.iqa {
            rows.push((format!("ssim_{}", r.label()), r.mean_ssim()));
            rows.push((format!("fsim_{}", r.label()), r.mean_fsim()));
        }
        for (p, curve) in &self.matching {
            rows.push((format!("rank1_{}", p.as_str()), curve.rank(1)));
        }
        rows
    }

    /// Writes `iqa.csv`, `cmc.csv` and `summary.csv` into `dir`.
    pub fn write_reports(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let table = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
            w.write_record(header).map_err(|e| csv_error(&path, e))?;
            for r in rows {
                w.write_record(&r).map_err(|e| csv_error(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))
        };
        let iqa = self
            .iqa
            .iter()
            .flat_map(|r| {
                r.rows.iter().map(|row| {
                    vec![row.image_id.clone(), r.label().to_string(), format!("{:.6}", row.ssim), format!("{:.6}", row.fsim)]
                })
            })
            .collect();
        table("iqa.csv", &["image_id", "direction", "ssim", "fsim"], iqa)?;
        let cmc = self
            .matching
            .iter()
            .flat_map(|(p, curve)| {
                curve
                    .rank_rates
                    .iter()
                    .enumerate()
                    .map(|(i, rate)| vec![p.as_str().to_string(), (i + 1).to_string(), format!("{rate:.6}")])
            })
            .collect();
        table("cmc.csv", &["protocol", "k", "rate"], cmc)?;
        let summary = self.summary().into_iter().map(|(k, v)| vec![k, format!("{v:.6}")]).collect();
        table("summary.csv", &["metric", "value"], summary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn luma_is_idempotent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rgb = Array3::from_shape_fn((3, 9, 7), |_| rng.random_range(0.0..255.0));
        let y = to_luma(rgb.view());
        let yy = to_luma(gray_to_rgb(&y).view());
        assert!(y.iter().zip(yy.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!((LUMA_WEIGHTS.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tensor_luma_maps_range() {
        let t = Tensor::full(-1.0f32, (3, 4, 4), &candle_core::Device::Cpu).unwrap();
        assert!(tensor_luma(&t).unwrap().iter().all(|&v| v == 0.0));
        let t = Tensor::full(1.0f32, (3, 4, 4), &candle_core::Device::Cpu).unwrap();
        assert!(tensor_luma(&t).unwrap().iter().all(|&v| (v - 255.0).abs() < 1e-9));
    }

    #[test]
    fn reference_ablation_is_ordered() {
        let a = reference::CUHK_ABLATION;
        assert!(a[0].ssim_photo < a[1].ssim_photo && a[1].ssim_photo < a[2].ssim_photo);
        assert_eq!(reference::CUHK_FULL.ssim_sketch, 0.6156);
    }
}
