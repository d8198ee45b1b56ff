//! Inference with a trained checkpoint: single images, whole directories,
//! manifests and comparison grids.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::config::Config;
use crate::data::align::{align_and_crop, CropGeometry};
use crate::data::imageio::{self, is_raster, load_rgb, save_png, tensor_to_rgb8};
use crate::data::pyramid::to_model_resolution;
use crate::data::{parse_landmarks, LandmarkAnnotation, MODEL_RESOLUTION};
use crate::error::{Error, Result};
use crate::models::{CycleModel, Direction, Mode};
use crate::trainer::checkpoint;

pub const MANIFEST_NAME: &str = "manifest.csv";
pub const GRID_NAME: &str = "grid.png";
pub const LANDMARKS_NAME: &str = "landmarks.txt";

/// Frozen generators from a checkpoint.
pub struct Synthesizer {
    model: CycleModel,
    pub config: Config,
    /// Hex SHA-256 of the checkpoint file.
    pub checkpoint_hash: String,
}

impl Synthesizer {
    pub fn load(path: &Path) -> Result<Synthesizer> {
        let (model, config) = checkpoint::load_model(path)?;
        Ok(Synthesizer {
            model,
            config,
            checkpoint_hash: checkpoint::file_hash(path)?,
        })
    }

    pub fn from_model(model: CycleModel, config: Config, checkpoint_hash: String) -> Synthesizer {
        Synthesizer {
            model,
            config,
            checkpoint_hash,
        }
    }

    pub fn model(&self) -> &CycleModel {
        &self.model
    }

    /// Finest-level output for a `(3, 256, 256)` input, in inference mode.
    pub fn translate(&self, direction: Direction, input: &Tensor) -> Result<Tensor> {
        let dims = input.dims();
        if dims != [3, MODEL_RESOLUTION, MODEL_RESOLUTION] {
            return Err(Error::Shape(format!("synthesis input must be 3x256x256, got {dims:?}")));
        }
        let out = self.model.generator(direction).forward(input, Mode::Eval)?;
        Ok(out.finest().squeeze(0)?)
    }

    pub fn photo_to_sketch(&self, photo: &Tensor) -> Result<Tensor> {
        self.translate(Direction::PhotoToSketch, photo)
    }

    pub fn sketch_to_photo(&self, sketch: &Tensor) -> Result<Tensor> {
        self.translate(Direction::SketchToPhoto, sketch)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SynthOptions {
    /// Eye annotations for raw inputs; defaults to `landmarks.txt` in the input directory.
    pub landmarks: Option<PathBuf>,
    /// Directory of ground-truth images matched by file stem.
    pub targets: Option<PathBuf>,
    pub grid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestRow {
    pub input_path: String,
    pub output_path: String,
    pub direction: String,
    pub checkpoint_hash: String,
    /// `ok`, or `skipped: <reason>`.
    pub status: String,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub grid: Option<PathBuf>,
}

impl Manifest {
    pub fn written(&self) -> usize {
        self.rows.iter().filter(|r| r.status == "ok").count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        if self.rows.is_empty() {
            w.write_record(["input_path", "output_path", "direction", "checkpoint_hash", "status"])
                .map_err(|e| csv_error(path, e))?;
        }
        for row in &self.rows {
            w.serialize(row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn raster_listing(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_raster(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}

/// Output file names: `{stem}.png`, or `{stem}_{ext}.png` when stems collide.
fn output_names(files: &[PathBuf]) -> Vec<String> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for f in files {
        *counts.entry(stem(f)).or_default() += 1;
    }
    files
        .iter()
        .map(|f| {
            let s = stem(f);
            if counts[&s] > 1 {
                let ext = f.extension().and_then(|e| e.to_str()).unwrap_or("");
                format!("{s}_{ext}.png")
            } else {
                format!("{s}.png")
            }
        })
        .collect()
}

fn read_landmarks(path: &Path) -> Result<BTreeMap<String, LandmarkAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text)
}

/// Decodes an image and brings it to model resolution, aligning it first
/// when an annotation is available.
pub fn prepare_image(path: &Path, landmark: Option<&LandmarkAnnotation>, geometry: &CropGeometry) -> Result<Tensor> {
    let raw = load_rgb(path)?;
    match landmark {
        Some(lm) => to_model_resolution(&align_and_crop(&raw, lm, geometry)?),
        None => to_model_resolution(&raw),
    }
}

struct GridRow {
    input: RgbImage,
    output: RgbImage,
    target: Option<RgbImage>,
}

fn compose_grid(rows: &[GridRow]) -> RgbImage {
    let s = MODEL_RESOLUTION as u32;
    let cols = if rows.iter().any(|r| r.target.is_some()) { 3 } else { 2 };
    let mut grid = RgbImage::from_pixel(cols * s, rows.len() as u32 * s, Rgb([255, 255, 255]));
    for (i, row) in rows.iter().enumerate() {
        let y = i as i64 * s as i64;
        image::imageops::replace(&mut grid, &row.input, 0, y);
        image::imageops::replace(&mut grid, &row.output, s as i64, y);
        if let Some(t) = &row.target {
            image::imageops::replace(&mut grid, t, 2 * s as i64, y);
        }
    }
    grid
}

/// Translates every raster image in `input_dir` and writes `{stem}.png`
/// outputs, `manifest.csv` and optionally `grid.png` to `output_dir`.
/// Unreadable inputs are skipped and recorded in the manifest.
pub fn synthesize_directory(
    synth: &Synthesizer,
    input_dir: &Path,
    direction: Direction,
    output_dir: &Path,
    opts: &SynthOptions,
) -> Result<Manifest> {
    if !input_dir.is_dir() {
        return Err(Error::MissingPath(input_dir.to_path_buf()));
    }
    std::fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let geometry = synth.config.dataset.geometry();
    let lm_path = opts.landmarks.clone().unwrap_or_else(|| input_dir.join(LANDMARKS_NAME));
    let landmarks = if lm_path.exists() { read_landmarks(&lm_path)? } else { BTreeMap::new() };
    let target_landmarks = match &opts.targets {
        Some(dir) if dir.join(LANDMARKS_NAME).exists() => read_landmarks(&dir.join(LANDMARKS_NAME))?,
        _ => landmarks.clone(),
    };
    let targets: BTreeMap<String, PathBuf> = match &opts.targets {
        Some(dir) => raster_listing(dir)?.into_iter().map(|p| (stem(&p), p)).collect(),
        None => BTreeMap::new(),
    };

    let files = raster_listing(input_dir)?;
    let names = output_names(&files);
    let mut manifest = Manifest::default();
    let mut grid_rows = Vec::new();
    for (file, name) in files.iter().zip(&names) {
        let id = stem(file);
        let out_path = output_dir.join(name);
        let result = (|| -> Result<GridRow> {
            let input = prepare_image(file, landmarks.get(&id), &geometry)?;
            let output = tensor_to_rgb8(&synth.translate(direction, &input)?)?;
            save_png(&output, &out_path)?;
            let target = match targets.get(&id) {
                Some(t) => match prepare_image(t, target_landmarks.get(&id), &geometry) {
                    Ok(t) => Some(tensor_to_rgb8(&t)?),
                    Err(e) => {
                        log::warn!("ground truth {} unreadable: {e}", t.display());
                        None
                    }
                },
                None => None,
            };
            Ok(GridRow {
                input: imageio::tensor_to_rgb8(&input)?,
                output,
                target,
            })
        })();
        let (output_path, status) = match result {
            Ok(row) => {
                if opts.grid {
                    grid_rows.push(row);
                }
                (out_path.display().to_string(), "ok".to_string())
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", file.display());
                (String::new(), format!("skipped: {e}"))
            }
        };
        manifest.rows.push(ManifestRow {
            input_path: file.display().to_string(),
            output_path,
            direction: direction.to_string(),
            checkpoint_hash: synth.checkpoint_hash.clone(),
            status,
        });
    }
    if opts.grid && !grid_rows.is_empty() {
        let path = output_dir.join(GRID_NAME);
        save_png(&compose_grid(&grid_rows), &path)?;
        manifest.grid = Some(path);
    }
    manifest.write_csv(&output_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}
