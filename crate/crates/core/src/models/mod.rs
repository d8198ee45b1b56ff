//! The two generators and six PatchGAN discriminators.
//!
//! `G_A` maps photos to sketches and `G_B` sketches to photos. The `D_A*`
//! discriminators judge sketches (real vs. `G_A` output) and the `D_B*`
//! discriminators judge photos, one per supervision level.

pub mod direct_conv;
pub mod discriminator;
pub mod generator;
pub mod layers;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use discriminator::{Discriminator, DiscriminatorSpec, PatchScoreMap};
pub use generator::{Generator, GeneratorOutput, GeneratorSpec, HeadTap, LayerToken};
pub use layers::{init_weights, Mode, NormKind, Parameterized, ParamKind};

use crate::data::Level;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "photo2sketch")]
    PhotoToSketch,
    #[serde(rename = "sketch2photo")]
    SketchToPhoto,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::PhotoToSketch, Direction::SketchToPhoto];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::PhotoToSketch => "photo2sketch",
            Direction::SketchToPhoto => "sketch2photo",
        }
    }

    /// Human label used in reports: synthesizing sketches vs. synthesizing photos.
    pub fn synthesis_label(self) -> &'static str {
        match self {
            Direction::PhotoToSketch => "sketch_synthesis",
            Direction::SketchToPhoto => "photo_synthesis",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "photo2sketch" => Ok(Direction::PhotoToSketch),
            "sketch2photo" => Ok(Direction::SketchToPhoto),
            other => Err(Error::Config(format!(
                "unknown direction {other:?}, expected photo2sketch or sketch2photo"
            ))),
        }
    }
}

/// `[model]` section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub generator: String,
    pub discriminator: String,
    pub norm: NormKind,
    pub discriminator_first_norm: bool,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorSpec::DEFAULT_LAYERS.to_string(),
            discriminator: DiscriminatorSpec::DEFAULT_LAYERS.to_string(),
            norm: NormKind::Batch,
            discriminator_first_norm: false,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn generator_spec(&self) -> Result<GeneratorSpec> {
        GeneratorSpec::parse(&self.generator, self.norm)
    }

    pub fn discriminator_spec(&self, level: Level) -> Result<DiscriminatorSpec> {
        let mut spec = DiscriminatorSpec::parse(&self.discriminator, level.resolution(), self.norm)?;
        spec.first_norm = self.discriminator_first_norm;
        Ok(spec)
    }
}

pub fn build_generator(spec: &GeneratorSpec, init_std: f64, rng: &mut impl Rng) -> Result<Generator> {
    let g = Generator::new(spec)?;
    init_weights(&g, init_std, rng)?;
    Ok(g)
}

pub fn build_discriminator(spec: &DiscriminatorSpec, init_std: f64, rng: &mut impl Rng) -> Result<Discriminator> {
    let d = Discriminator::new(spec)?;
    init_weights(&d, init_std, rng)?;
    Ok(d)
}

/// Both generators and all six discriminators.
#[derive(Debug, Clone)]
pub struct CycleModel {
    pub g_a: Generator,
    pub g_b: Generator,
    /// Sketch-domain discriminators, indexed by [`Level::index`].
    pub d_a: [Discriminator; 3],
    /// Photo-domain discriminators.
    pub d_b: [Discriminator; 3],
}

impl CycleModel {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<CycleModel> {
        let gspec = cfg.generator_spec()?;
        let rng = |i: u64| stream(seed, Purpose::Init, i);
        let g_a = build_generator(&gspec, cfg.init_std, &mut rng(0))?;
        let g_b = build_generator(&gspec, cfg.init_std, &mut rng(1))?;
        let disc = |offset: u64, level: Level| -> Result<Discriminator> {
            build_discriminator(
                &cfg.discriminator_spec(level)?,
                cfg.init_std,
                &mut stream(seed, Purpose::Init, offset + level.index() as u64),
            )
        };
        Ok(CycleModel {
            g_a,
            g_b,
            d_a: [disc(10, Level::L64)?, disc(10, Level::L128)?, disc(10, Level::L256)?],
            d_b: [disc(20, Level::L64)?, disc(20, Level::L128)?, disc(20, Level::L256)?],
        })
    }

    pub fn generator(&self, direction: Direction) -> &Generator {
        match direction {
            Direction::PhotoToSketch => &self.g_a,
            Direction::SketchToPhoto => &self.g_b,
        }
    }

    /// Named groups in checkpoint order.
    pub fn groups(&self) -> Vec<(String, &dyn Parameterized)> {
        let mut out: Vec<(String, &dyn Parameterized)> =
            vec![("g_a".into(), &self.g_a), ("g_b".into(), &self.g_b)];
        for l in Level::ALL {
            out.push((format!("d_a{}", l.resolution()), &self.d_a[l.index()]));
        }
        for l in Level::ALL {
            out.push((format!("d_b{}", l.resolution()), &self.d_b[l.index()]));
        }
        out
    }
}

impl Parameterized for CycleModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &candle_core::Var, ParamKind)) {
        for (name, group) in self.groups() {
            group.visit(&layers::join(prefix, &name), f);
        }
    }
}
