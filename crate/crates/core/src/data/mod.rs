//! Paired photo/sketch datasets: ingestion, alignment, resizing,
//! augmentation, splitting and batching.

pub mod align;
pub mod augment;
pub mod imageio;
pub mod pyramid;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use align::{align_and_crop, CropGeometry};
pub use augment::{augment, hflip, AugmentConfig, AugmentedSample};
pub use pyramid::{make_pyramid, to_model_resolution, Level, ResolutionPyramid, MODEL_RESOLUTION};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkAnnotation {
    pub image_id: String,
    pub left_eye: (f64, f64),
    pub right_eye: (f64, f64),
}

impl LandmarkAnnotation {
    /// Checks eye ordering and that both eyes fall inside a `width x height` image.
    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        let fail = |reason: String| Error::InvalidLandmarks {
            identity: self.image_id.clone(),
            reason,
        };
        for (name, (x, y)) in [("left", self.left_eye), ("right", self.right_eye)] {
            if !x.is_finite() || !y.is_finite() {
                return Err(fail(format!("{name} eye is not finite")));
            }
            if x < 0.0 || y < 0.0 || x > (width - 1) as f64 || y > (height - 1) as f64 {
                return Err(fail(format!(
                    "{name} eye ({x}, {y}) outside {width}x{height} image"
                )));
            }
        }
        if self.left_eye == self.right_eye {
            return Err(fail("zero inter-ocular distance".into()));
        }
        if self.left_eye.0 >= self.right_eye.0 {
            return Err(fail("left eye must have smaller x than right eye".into()));
        }
        Ok(())
    }
}

/// Parses `<id> <lx> <ly> <rx> <ry>` lines. Blank lines and `#` comments are skipped.
pub fn parse_landmarks(text: &str) -> Result<BTreeMap<String, LandmarkAnnotation>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::LandmarkParse {
            line: n + 1,
            content: line.to_string(),
        };
        if fields.len() != 5 {
            return Err(bad());
        }
        let nums = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let id = fields[0].to_string();
        out.insert(
            id.clone(),
            LandmarkAnnotation {
                image_id: id,
                left_eye: (nums[0], nums[1]),
                right_eye: (nums[2], nums[3]),
            },
        );
    }
    Ok(out)
}

pub fn write_landmarks<'a>(annotations: impl IntoIterator<Item = &'a LandmarkAnnotation>) -> String {
    annotations
        .into_iter()
        .map(|a| {
            format!(
                "{} {} {} {} {}\n",
                a.image_id, a.left_eye.0, a.left_eye.1, a.right_eye.0, a.right_eye.1
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One identity's aligned photo and sketch, each `(3, 256, 256)` in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub identity: String,
    pub photo: Tensor,
    pub sketch: Tensor,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub name: String,
    pub split: Split,
    pub samples: Vec<PairedSample>,
    pub augmentation_enabled: bool,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn identities(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.identity.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: DatasetSplit,
    pub val: DatasetSplit,
    pub test: DatasetSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// When set, identities are shuffled with this seed before partitioning.
    pub shuffle_seed: Option<u64>,
}

impl SplitSpec {
    pub const CUHK: SplitSpec = SplitSpec {
        train: 60,
        val: 28,
        test: 100,
        shuffle_seed: None,
    };
    pub const CUFSF: SplitSpec = SplitSpec {
        train: 600,
        val: 297,
        test: 297,
        shuffle_seed: None,
    };

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// `[dataset]` section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub root: PathBuf,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub shuffle: bool,
    pub crop_width: u32,
    pub crop_height: u32,
    pub left_eye: [f64; 2],
    pub right_eye: [f64; 2],
    pub flip_prob: f64,
    pub noise_amplitude: f32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let g = CropGeometry::default();
        let a = AugmentConfig::default();
        Self {
            root: PathBuf::from("data/cuhk"),
            train: SplitSpec::CUHK.train,
            val: SplitSpec::CUHK.val,
            test: SplitSpec::CUHK.test,
            shuffle: false,
            crop_width: g.width,
            crop_height: g.height,
            left_eye: [g.left_eye.0, g.left_eye.1],
            right_eye: [g.right_eye.0, g.right_eye.1],
            flip_prob: a.flip_prob,
            noise_amplitude: a.noise_amplitude,
        }
    }
}

impl DatasetConfig {
    pub fn geometry(&self) -> CropGeometry {
        CropGeometry {
            width: self.crop_width,
            height: self.crop_height,
            left_eye: (self.left_eye[0], self.left_eye[1]),
            right_eye: (self.right_eye[0], self.right_eye[1]),
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            flip_prob: self.flip_prob,
            noise_amplitude: self.noise_amplitude,
        }
    }

    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train: self.train,
            val: self.val,
            test: self.test,
            shuffle_seed: self.shuffle.then_some(seed),
        }
    }
}

/// An identity's files on disk, before decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub identity: String,
    pub photo: PathBuf,
    pub sketch: PathBuf,
    pub landmarks: LandmarkAnnotation,
}

fn raster_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && imageio::is_raster(&path) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Lists all identities under `root`, sorted lexicographically.
pub fn scan_dataset(root: &Path) -> Result<Vec<DatasetEntry>> {
    if !root.exists() {
        return Err(Error::MissingPath(root.to_path_buf()));
    }
    let photos = raster_files(&root.join("photos"))?;
    if photos.is_empty() {
        return Err(Error::NoSamples(root.to_path_buf()));
    }
    let sketches = raster_files(&root.join("sketches"))?;
    let lm_path = root.join("landmarks.txt");
    let landmarks = if lm_path.exists() {
        let text = std::fs::read_to_string(&lm_path).map_err(|e| Error::io(&lm_path, e))?;
        parse_landmarks(&text)?
    } else {
        BTreeMap::new()
    };
    photos
        .into_iter()
        .map(|(identity, photo)| {
            let sketch = sketches.get(&identity).cloned().ok_or_else(|| Error::MissingPair {
                identity: identity.clone(),
                what: "no sketch found".into(),
            })?;
            let landmarks = landmarks.get(&identity).cloned().ok_or_else(|| Error::MissingPair {
                identity: identity.clone(),
                what: "no landmark record in landmarks.txt".into(),
            })?;
            Ok(DatasetEntry {
                identity,
                photo,
                sketch,
                landmarks,
            })
        })
        .collect()
}

/// Splits entries into train/val/test of exactly the requested sizes:
/// lexicographic identity order (or a seeded shuffle of it), first-N partitioning.
pub fn partition<T: Clone>(entries: &[T], spec: &SplitSpec) -> Result<[Vec<T>; 3]> {
    if spec.total() > entries.len() {
        return Err(Error::SplitTooLarge {
            requested: spec.total(),
            available: entries.len(),
        });
    }
    let mut order: Vec<usize> = (0..entries.len()).collect();
    if let Some(seed) = spec.shuffle_seed {
        order.shuffle(&mut stream(seed, Purpose::Split, 0));
    }
    let take = |from: usize, n: usize| order[from..from + n].iter().map(|&i| entries[i].clone()).collect();
    Ok([
        take(0, spec.train),
        take(spec.train, spec.val),
        take(spec.train + spec.val, spec.test),
    ])
}

/// Decodes, aligns and resizes one identity.
pub fn load_entry(entry: &DatasetEntry, geometry: &CropGeometry, split: Split) -> Result<PairedSample> {
    let prep = |path: &Path| -> Result<Tensor> {
        let raw = imageio::load_rgb(path)?;
        let cropped = align_and_crop(&raw, &entry.landmarks, geometry)?;
        to_model_resolution(&cropped)
    };
    Ok(PairedSample {
        identity: entry.identity.clone(),
        photo: prep(&entry.photo)?,
        sketch: prep(&entry.sketch)?,
        split,
    })
}

pub fn load_dataset(root: &Path, spec: &SplitSpec, geometry: &CropGeometry) -> Result<Datasets> {
    let entries = scan_dataset(root)?;
    let [train, val, test] = partition(&entries, spec)?;
    let load = |entries: Vec<DatasetEntry>, split: Split| -> Result<DatasetSplit> {
        let samples = entries
            .iter()
            .map(|e| load_entry(e, geometry, split))
            .collect::<Result<Vec<_>>>()?;
        Ok(DatasetSplit {
            name: split.to_string(),
            split,
            samples,
            augmentation_enabled: split == Split::Train,
        })
    };
    let sets = Datasets {
        train: load(train, Split::Train)?,
        val: load(val, Split::Val)?,
        test: load(test, Split::Test)?,
    };
    check_disjoint(&sets)?;
    Ok(sets)
}

fn check_disjoint(sets: &Datasets) -> Result<()> {
    let mut seen = BTreeSet::new();
    for split in [&sets.train, &sets.val, &sets.test] {
        for id in split.identities() {
            if !seen.insert(id.to_string()) {
                return Err(Error::MissingPair {
                    identity: id.to_string(),
                    what: "appears in more than one split".into(),
                });
            }
        }
    }
    Ok(())
}

/// A training batch. Inputs carry augmentation noise; targets are clean.
#[derive(Debug, Clone)]
pub struct Batch {
    pub identities: Vec<String>,
    pub photo_input: Tensor,
    pub sketch_input: Tensor,
    pub photo_target: ResolutionPyramid,
    pub sketch_target: ResolutionPyramid,
    pub flipped: Vec<bool>,
}

impl Batch {
    pub fn from_samples(samples: &[AugmentedSample]) -> Result<Batch> {
        let stack = |f: &dyn Fn(&AugmentedSample) -> &Tensor| -> Result<Tensor> {
            let ts: Vec<&Tensor> = samples.iter().map(f).collect();
            Ok(Tensor::stack(&ts, 0)?)
        };
        let photo_target = make_pyramid(&stack(&|s| &s.target.photo)?)?;
        let sketch_target = make_pyramid(&stack(&|s| &s.target.sketch)?)?;
        Ok(Batch {
            identities: samples.iter().map(|s| s.target.identity.clone()).collect(),
            photo_input: stack(&|s| &s.photo_input)?,
            sketch_input: stack(&|s| &s.sketch_input)?,
            photo_target,
            sketch_target,
            flipped: samples.iter().map(|s| s.flipped).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }
}

/// The batch sequence for one epoch. Order and augmentation depend only on
/// `(seed, epoch)`, so repeated calls yield identical batches.
pub fn epoch_batches<'a>(
    split: &'a DatasetSplit,
    batch_size: usize,
    augment_cfg: &'a AugmentConfig,
    seed: u64,
    epoch: usize,
) -> impl Iterator<Item = Result<Batch>> + 'a {
    let mut order: Vec<usize> = (0..split.samples.len()).collect();
    order.shuffle(&mut stream(seed, Purpose::Shuffle, epoch as u64));
    let cfg = if split.augmentation_enabled {
        *augment_cfg
    } else {
        AugmentConfig::IDENTITY
    };
    let batch_size = batch_size.max(1);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    chunks.into_iter().enumerate().map(move |(b, chunk)| {
        let samples = chunk
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                let key = ((epoch as u64) << 32) | (b * batch_size + j) as u64;
                augment(&split.samples[i], &cfg, &mut stream(seed, Purpose::Augment, key))
            })
            .collect::<Result<Vec<_>>>()?;
        Batch::from_samples(&samples)
    })
}
