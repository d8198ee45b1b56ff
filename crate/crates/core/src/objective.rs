//! Per-level adversarial, synthesis and cycle-consistency losses and their
//! weighted total.
//!
//! Direction `A` terms belong to `G_A` (photo to sketch) and its sketch
//! discriminators; `syn_A`/`cyc_A` compare photo-domain images, following the
//! subscript of the image being compared.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{Level, ResolutionPyramid};
use crate::error::{Error, Result};
use crate::models::layers::sigmoid;
use crate::models::{Discriminator, GeneratorOutput, Mode, PatchScoreMap};

pub const CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GanLoss {
    /// BCE; the generator maximizes `log D(fake)`.
    #[default]
    NonSaturating,
    /// BCE; the generator minimizes `log(1 - D(fake))` as written in the minimax game.
    Saturating,
    /// Least squares on raw scores.
    LeastSquares,
}

/// Synthesis (`lambda`) and cycle (`eta`) weights per level, shared by both directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: [f64; 3],
    pub eta: [f64; 3],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: [1.0; 3],
            eta: [0.7; 3],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.iter().chain(&self.eta).any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// `[objective]` section of the run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub lambda: [f64; 3],
    pub eta: [f64; 3],
    pub gan_loss: GanLoss,
    pub clamp_eps: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda: w.lambda,
            eta: w.eta,
            gan_loss: GanLoss::NonSaturating,
            clamp_eps: CLAMP_EPS,
        }
    }
}

impl ObjectiveConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            eta: self.eta,
        }
    }
}

/// `-mean(log p)` when `real`, `-mean(log(1 - p))` otherwise, with `p` clamped to `[eps, 1 - eps]`.
pub fn bce_probs(p: &Tensor, real: bool, eps: f64) -> Result<Tensor> {
    let p = p.to_dtype(DType::F64)?.clamp(eps, 1.0 - eps)?;
    let inner = if real { p.log()? } else { p.affine(-1.0, 1.0)?.log()? };
    Ok(inner.mean_all()?.neg()?)
}

fn wide(s: &PatchScoreMap) -> Result<Tensor> {
    Ok(s.logits.to_dtype(DType::F64)?)
}

pub fn d_loss_from_scores(real: &PatchScoreMap, fake: &PatchScoreMap, gan: GanLoss, eps: f64) -> Result<Tensor> {
    match gan {
        GanLoss::NonSaturating | GanLoss::Saturating => {
            let r = bce_probs(&sigmoid(&wide(real)?)?, true, eps)?;
            let f = bce_probs(&sigmoid(&wide(fake)?)?, false, eps)?;
            Ok((r + f)?)
        }
        GanLoss::LeastSquares => {
            let r = wide(real)?.affine(1.0, -1.0)?.sqr()?.mean_all()?;
            let f = wide(fake)?.sqr()?.mean_all()?;
            Ok((r + f)?)
        }
    }
}

pub fn g_loss_from_scores(fake: &PatchScoreMap, gan: GanLoss, eps: f64) -> Result<Tensor> {
    match gan {
        GanLoss::NonSaturating => bce_probs(&sigmoid(&wide(fake)?)?, true, eps),
        // minimize mean log(1 - D(fake)), i.e. the negated "fake" BCE
        GanLoss::Saturating => Ok(bce_probs(&sigmoid(&wide(fake)?)?, false, eps)?.neg()?),
        GanLoss::LeastSquares => Ok(wide(fake)?.affine(1.0, -1.0)?.sqr()?.mean_all()?),
    }
}

fn check_resolution(d: &Discriminator, img: &Tensor) -> Result<()> {
    let r = d.spec.resolution;
    let dims = img.dims();
    if dims.len() != 4 || dims[2] != r || dims[3] != r {
        return Err(Error::Shape(format!(
            "{r}x{r} discriminator given image {dims:?}"
        )));
    }
    Ok(())
}

/// Discriminator loss on a real image and a detached fake at the discriminator's level.
pub fn adversarial_loss_d(
    d: &Discriminator,
    real: &Tensor,
    fake: &Tensor,
    cfg: &ObjectiveConfig,
    mode: Mode,
) -> Result<Tensor> {
    check_resolution(d, real)?;
    check_resolution(d, fake)?;
    let real_scores = d.forward(real, mode)?;
    let fake_scores = d.forward(fake, mode)?;
    d_loss_from_scores(&real_scores, &fake_scores, cfg.gan_loss, cfg.clamp_eps)
}

/// Generator loss on a fake still attached to the generator graph.
pub fn adversarial_loss_g(d: &Discriminator, fake: &Tensor, cfg: &ObjectiveConfig, mode: Mode) -> Result<Tensor> {
    check_resolution(d, fake)?;
    let scores = d.forward(fake, mode)?;
    g_loss_from_scores(&scores, cfg.gan_loss, cfg.clamp_eps)
}

/// Mean absolute error.
pub fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("L1 between {:?} and {:?}", a.dims(), b.dims())));
    }
    Ok((a - b)?.abs()?.to_dtype(DType::F64)?.mean_all()?)
}

fn per_level_l1(images: &GeneratorOutput, reference: &ResolutionPyramid) -> Result<[Tensor; 3]> {
    let level = |l: Level| l1(images.level(l), reference.level(l));
    Ok([level(Level::L64)?, level(Level::L128)?, level(Level::L256)?])
}

/// Per-level L1 between synthesized images and their targets.
pub fn synthesis_loss(fake: &GeneratorOutput, target: &ResolutionPyramid) -> Result<[Tensor; 3]> {
    per_level_l1(fake, target)
}

/// Per-level L1 between cycle reconstructions and the original source.
pub fn cycle_loss(rec: &GeneratorOutput, source: &ResolutionPyramid) -> Result<[Tensor; 3]> {
    per_level_l1(rec, source)
}

/// All 18 terms of the objective. Every slot must be filled before totalling;
/// ablated adversarial terms are passed as explicit zeros.
#[derive(Debug, Clone)]
pub struct ObjectiveTerms<T> {
    pub gan_a: [Option<T>; 3],
    pub gan_b: [Option<T>; 3],
    pub syn_a: [Option<T>; 3],
    pub syn_b: [Option<T>; 3],
    pub cyc_a: [Option<T>; 3],
    pub cyc_b: [Option<T>; 3],
}

impl<T> Default for ObjectiveTerms<T> {
    fn default() -> Self {
        Self {
            gan_a: [None, None, None],
            gan_b: [None, None, None],
            syn_a: [None, None, None],
            syn_b: [None, None, None],
            cyc_a: [None, None, None],
            cyc_b: [None, None, None],
        }
    }
}

impl<T: Clone> ObjectiveTerms<T> {
    pub fn filled(value: T) -> Self {
        let a = || [Some(value.clone()), Some(value.clone()), Some(value.clone())];
        Self {
            gan_a: a(),
            gan_b: a(),
            syn_a: a(),
            syn_b: a(),
            cyc_a: a(),
            cyc_b: a(),
        }
    }
}

/// `(name, terms)` in objective order.
fn groups<T>(t: &ObjectiveTerms<T>) -> [(&'static str, &[Option<T>; 3]); 6] {
    [
        ("gan_A", &t.gan_a),
        ("gan_B", &t.gan_b),
        ("syn_A", &t.syn_a),
        ("syn_B", &t.syn_b),
        ("cyc_A", &t.cyc_a),
        ("cyc_B", &t.cyc_b),
    ]
}

/// Every component of the objective, individually inspectable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gan_a: [f64; 3],
    pub gan_b: [f64; 3],
    pub syn_a: [f64; 3],
    pub syn_b: [f64; 3],
    pub cyc_a: [f64; 3],
    pub cyc_b: [f64; 3],
    pub total: f64,
}

impl LossBreakdown {
    /// The 18 components as `(name, value)`, named `gan_A1` .. `cyc_B3` (level 1 = 64).
    pub fn components(&self) -> Vec<(String, f64)> {
        let groups: [(&str, &[f64; 3]); 6] = [
            ("gan_A", &self.gan_a),
            ("gan_B", &self.gan_b),
            ("syn_A", &self.syn_a),
            ("syn_B", &self.syn_b),
            ("cyc_A", &self.cyc_a),
            ("cyc_B", &self.cyc_b),
        ];
        groups
            .iter()
            .flat_map(|(name, vals)| vals.iter().enumerate().map(move |(i, v)| (format!("{name}{}", i + 1), *v)))
            .collect()
    }

    /// Name of the first non-finite component, in objective order, or of the total.
    pub fn first_non_finite(&self) -> Option<(String, f64)> {
        self.components()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .or_else(|| (!self.total.is_finite()).then(|| ("total".to_string(), self.total)))
    }

    /// Level-3 synthesis loss averaged over both directions.
    pub fn finest_synthesis(&self) -> f64 {
        (self.syn_a[2] + self.syn_b[2]) / 2.0
    }
}

fn take<T: Clone>(name: &str, level: usize, v: &Option<T>) -> Result<T> {
    v.clone().ok_or_else(|| Error::MissingTerm(format!("{name}{}", level + 1)))
}

/// `sum_i gan_A[i] + gan_B[i] + lambda[i] (syn_A[i] + syn_B[i]) + eta[i] (cyc_A[i] + cyc_B[i])`.
pub fn total_objective(parts: &ObjectiveTerms<f64>, w: &LossWeights) -> Result<LossBreakdown> {
    let mut out = LossBreakdown::default();
    let mut total = 0.0;
    for i in 0..3 {
        let coef = [1.0, 1.0, w.lambda[i], w.lambda[i], w.eta[i], w.eta[i]];
        for ((name, terms), c) in groups(parts).iter().zip(coef) {
            let v = take(name, i, &terms[i])?;
            total += v * c;
        }
    }
    for (dst, (name, src)) in [
        &mut out.gan_a,
        &mut out.gan_b,
        &mut out.syn_a,
        &mut out.syn_b,
        &mut out.cyc_a,
        &mut out.cyc_b,
    ]
    .into_iter()
    .zip(groups(parts))
    {
        for i in 0..3 {
            dst[i] = take(name, i, &src[i])?;
        }
    }
    out.total = total;
    Ok(out)
}

/// Differentiable total plus its breakdown. The sum is accumulated in f64 in
/// the same order as [`total_objective`], so `breakdown.total` equals the
/// scalar value of the returned tensor.
pub fn total_objective_tensor(parts: &ObjectiveTerms<Tensor>, w: &LossWeights) -> Result<(Tensor, LossBreakdown)> {
    let mut scalars: ObjectiveTerms<f64> = ObjectiveTerms::default();
    let mut total: Option<Tensor> = None;
    for i in 0..3 {
        let coef = [1.0, 1.0, w.lambda[i], w.lambda[i], w.eta[i], w.eta[i]];
        for ((name, terms), c) in groups(parts).iter().zip(coef) {
            let t = take(name, i, &terms[i])?.to_dtype(DType::F64)?;
            let weighted = (&t * c)?;
            total = Some(match total {
                None => weighted,
                Some(acc) => (acc + weighted)?,
            });
        }
    }
    let scalar = |t: &Option<Tensor>| -> Result<Option<f64>> {
        Ok(Some(
            t.as_ref()
                .expect("checked above")
                .to_dtype(DType::F64)?
                .to_scalar::<f64>()?,
        ))
    };
    for (dst, src) in [
        (&mut scalars.gan_a, &parts.gan_a),
        (&mut scalars.gan_b, &parts.gan_b),
        (&mut scalars.syn_a, &parts.syn_a),
        (&mut scalars.syn_b, &parts.syn_b),
        (&mut scalars.cyc_a, &parts.cyc_a),
        (&mut scalars.cyc_b, &parts.cyc_b),
    ] {
        for i in 0..3 {
            dst[i] = scalar(&src[i])?;
        }
    }
    let breakdown = total_objective(&scalars, w)?;
    let total = total.expect("18 terms");
    Ok((total, breakdown))
}
