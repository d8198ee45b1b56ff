//! Alternating generator / discriminator optimization over all active levels.

pub mod adam;
pub mod checkpoint;
pub mod replay;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use checkpoint::{load_model, CheckpointMeta};
pub use replay::ReplayBuffer;

use crate::config::Config;
use crate::data::{epoch_batches, Batch, DatasetSplit, Datasets, Level};
use crate::error::{Error, Result};
use crate::metrics::{ssim, tensor_luma};
use crate::models::{CycleModel, Direction, Discriminator, Mode, Parameterized};
use crate::objective::{
    adversarial_loss_d, adversarial_loss_g, cycle_loss, synthesis_loss, total_objective_tensor, LossBreakdown,
    ObjectiveTerms,
};
use crate::rng::{stream, Purpose};

pub const LOG_NAME: &str = "train_log.jsonl";
pub const VAL_LOG_NAME: &str = "val_log.jsonl";

/// `[trainer]` section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub epochs_constant: usize,
    pub epochs_decay: usize,
    pub base_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    /// Resolutions whose discriminators are trained (the ablation mask).
    pub levels: Vec<usize>,
    pub replay_buffer_size: usize,
    pub checkpoint_interval: usize,
    /// Score the val split after every epoch and keep the best checkpoint.
    pub validate: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs_constant: 100,
            epochs_decay: 100,
            base_lr: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 1,
            levels: vec![64, 128, 256],
            replay_buffer_size: 50,
            checkpoint_interval: 5,
            validate: true,
        }
    }
}

impl TrainerConfig {
    pub fn last_epoch(&self) -> usize {
        self.epochs_constant + self.epochs_decay
    }

    /// Active flags indexed by [`Level::index`].
    pub fn mask(&self) -> Result<[bool; 3]> {
        let mut mask = [false; 3];
        for &r in &self.levels {
            let level = Level::from_resolution(r)
                .ok_or_else(|| Error::Config(format!("trainer.levels: {r} is not one of 64, 128, 256")))?;
            mask[level.index()] = true;
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Config("trainer.levels must not be empty".into()));
        }
        Ok(mask)
    }

    pub fn validate(&self) -> Result<()> {
        self.mask()?;
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(Error::Config("trainer.base_lr must be finite and nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("trainer.batch_size must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("trainer.{name} must be in [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Constant for `epochs_constant` epochs, then linear decay reaching zero at the last epoch.
pub fn lr_at_epoch(cfg: &TrainerConfig, epoch: usize) -> Result<f64> {
    let last = cfg.last_epoch();
    if epoch < 1 || epoch > last {
        return Err(Error::EpochOutOfRange { epoch, last });
    }
    if epoch <= cfg.epochs_constant {
        Ok(cfg.base_lr)
    } else {
        Ok(cfg.base_lr * (last - epoch) as f64 / cfg.epochs_decay as f64)
    }
}

/// Generator-phase and discriminator-phase losses of one step. In the
/// discriminator breakdown, `gan_a`/`gan_b` hold the `D_A`/`D_B` losses and
/// the reconstruction terms are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub generator: LossBreakdown,
    pub discriminator: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub losses: StepLosses,
}

impl StepRecord {
    /// Flat JSON object: generator components by name, discriminator ones prefixed `d_`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        m.insert("step".into(), self.step.into());
        m.insert("epoch".into(), self.epoch.into());
        m.insert("lr".into(), self.lr.into());
        for (k, v) in self.losses.generator.components() {
            m.insert(k, v.into());
        }
        m.insert("total".into(), self.losses.generator.total.into());
        for (k, v) in self.losses.discriminator.components().into_iter().take(6) {
            m.insert(format!("d_{k}"), v.into());
        }
        m.insert("d_total".into(), self.losses.discriminator.total.into());
        serde_json::Value::Object(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    pub epoch: usize,
    pub ssim_photo: f64,
    pub ssim_sketch: f64,
    /// Selection score: mean of the two directions.
    pub ssim_mean: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FitHistory {
    pub steps: Vec<StepRecord>,
    pub validation: Vec<ValRecord>,
    pub checkpoints: Vec<PathBuf>,
}

const D_GROUPS: [&str; 2] = ["d_a", "d_b"];

pub struct Trainer {
    pub config: Config,
    pub model: CycleModel,
    opt_g: Adam,
    /// `[D_A, D_B][level]`.
    opt_d: [Vec<Adam>; 2],
    buffers: [Vec<ReplayBuffer>; 2],
    /// Completed optimization steps.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val: Option<f64>,
}

fn level_name(i: usize) -> usize {
    Level::ALL[i].resolution()
}

impl Trainer {
    pub fn new(config: Config) -> Result<Trainer> {
        config.validate()?;
        let model = CycleModel::build(&config.model, config.seed)?;
        let t = &config.trainer;
        let adam = |params| Adam::new(params, t.adam_beta1, t.adam_beta2, t.adam_eps);
        let mut gp = Vec::new();
        for (group, g) in [("g_a", &model.g_a), ("g_b", &model.g_b)] {
            gp.extend(g.parameters().into_iter().map(|(n, v)| (format!("{group}.{n}"), v)));
        }
        let opt_g = adam(gp)?;
        let d_opts = |ds: &[Discriminator; 3]| ds.iter().map(|d| adam(d.parameters())).collect::<Result<Vec<_>>>();
        let opt_d = [d_opts(&model.d_a)?, d_opts(&model.d_b)?];
        let buffers = [0, 1].map(|_| (0..3).map(|_| ReplayBuffer::new(t.replay_buffer_size)).collect());
        Ok(Trainer {
            config,
            model,
            opt_g,
            opt_d,
            buffers,
            step: 0,
            epoch: 0,
            best_val: None,
        })
    }

    pub fn replay_buffers(&self) -> &[Vec<ReplayBuffer>; 2] {
        &self.buffers
    }

    pub fn discriminator(&self, k: usize, level: usize) -> &Discriminator {
        if k == 0 {
            &self.model.d_a[level]
        } else {
            &self.model.d_b[level]
        }
    }

    /// One generator update on the full objective, then one update of every
    /// active discriminator on detached (replay-sampled) fakes.
    pub fn train_step(&mut self, batch: &Batch, lr: f64) -> Result<StepLosses> {
        let mask = self.config.trainer.mask()?;
        let obj = self.config.objective;
        let zero = Tensor::new(0f64, &Device::Cpu)?;
        let m = &self.model;

        // generator phase
        let fake_sketch = m.g_a.forward(&batch.photo_input, Mode::Train)?;
        let fake_photo = m.g_b.forward(&batch.sketch_input, Mode::Train)?;
        let rec_photo = m.g_b.forward(fake_sketch.finest(), Mode::Train)?;
        let rec_sketch = m.g_a.forward(fake_photo.finest(), Mode::Train)?;

        let mut terms: ObjectiveTerms<Tensor> = ObjectiveTerms::default();
        terms.syn_a = synthesis_loss(&fake_photo, &batch.photo_target)?.map(Some);
        terms.syn_b = synthesis_loss(&fake_sketch, &batch.sketch_target)?.map(Some);
        terms.cyc_a = cycle_loss(&rec_photo, &batch.photo_target)?.map(Some);
        terms.cyc_b = cycle_loss(&rec_sketch, &batch.sketch_target)?.map(Some);
        for level in Level::ALL {
            let i = level.index();
            let (ga, gb) = if mask[i] {
                (
                    adversarial_loss_g(&m.d_a[i], fake_sketch.level(level), &obj, Mode::TrainFrozenStats)?,
                    adversarial_loss_g(&m.d_b[i], fake_photo.level(level), &obj, Mode::TrainFrozenStats)?,
                )
            } else {
                (zero.clone(), zero.clone())
            };
            terms.gan_a[i] = Some(ga);
            terms.gan_b[i] = Some(gb);
        }
        let (total, generator) = total_objective_tensor(&terms, &obj.weights())?;
        if let Some((term, value)) = generator.first_non_finite() {
            return Err(Error::NonFinite { term, value });
        }
        let grads = total.backward()?;
        self.opt_g.step(&grads, lr)?;
        drop(grads);

        // discriminator phase
        let mut rng = stream(self.config.seed, Purpose::Replay, self.step);
        let mut discriminator = LossBreakdown::default();
        let mut d_total: Option<Tensor> = None;
        for (k, (fakes, reals)) in [(&fake_sketch, &batch.sketch_target), (&fake_photo, &batch.photo_target)]
            .into_iter()
            .enumerate()
        {
            for level in Level::ALL {
                let i = level.index();
                if !mask[i] {
                    continue;
                }
                let shown = self.buffers[k][i].buffer_push_sample(&fakes.level(level).detach(), &mut rng)?;
                let d = if k == 0 { &self.model.d_a[i] } else { &self.model.d_b[i] };
                let loss = adversarial_loss_d(d, reals.level(level), &shown, &obj, Mode::Train)?;
                let value = loss.to_scalar::<f64>()?;
                if !value.is_finite() {
                    let dir = if k == 0 { "A" } else { "B" };
                    return Err(Error::NonFinite {
                        term: format!("d_gan_{dir}{}", i + 1),
                        value,
                    });
                }
                if k == 0 {
                    discriminator.gan_a[i] = value;
                } else {
                    discriminator.gan_b[i] = value;
                }
                discriminator.total += value;
                d_total = Some(match d_total {
                    None => loss,
                    Some(acc) => (acc + loss)?,
                });
            }
        }
        if let Some(d_total) = d_total {
            let grads = d_total.backward()?;
            for opts in self.opt_d.iter_mut() {
                for (i, opt) in opts.iter_mut().enumerate() {
                    if mask[i] {
                        opt.step(&grads, lr)?;
                    }
                }
            }
        }
        self.step += 1;
        Ok(StepLosses {
            generator,
            discriminator,
        })
    }

    /// Mean level-3 SSIM over `split` for both directions, in inference mode.
    pub fn validate(&self, split: &DatasetSplit) -> Result<Option<ValRecord>> {
        if split.is_empty() {
            return Ok(None);
        }
        let mut sums = [0.0; 2];
        for s in &split.samples {
            for (k, (dir, input, target)) in [
                (Direction::SketchToPhoto, &s.sketch, &s.photo),
                (Direction::PhotoToSketch, &s.photo, &s.sketch),
            ]
            .into_iter()
            .enumerate()
            {
                let out = self.model.generator(dir).forward(input, Mode::Eval)?;
                let fake = tensor_luma(&out.finest().squeeze(0)?)?;
                sums[k] += ssim(fake.view(), tensor_luma(target)?.view())?;
            }
        }
        let n = split.len() as f64;
        let (ssim_photo, ssim_sketch) = (sums[0] / n, sums[1] / n);
        Ok(Some(ValRecord {
            epoch: self.epoch,
            ssim_photo,
            ssim_sketch,
            ssim_mean: (ssim_photo + ssim_sketch) / 2.0,
        }))
    }

    fn archive_tensors(&self) -> (Vec<(String, Tensor)>, BTreeMap<String, u64>, BTreeMap<String, (usize, u64)>) {
        let mut tensors = checkpoint::model_tensors(&self.model);
        let mut optimizers = BTreeMap::new();
        let mut push_opt = |name: String, opt: &Adam, tensors: &mut Vec<(String, Tensor)>| {
            for (n, t) in opt.state() {
                tensors.push((format!("opt.{name}.{n}"), t));
            }
            optimizers.insert(name, opt.t);
        };
        push_opt("g".into(), &self.opt_g, &mut tensors);
        for (k, opts) in self.opt_d.iter().enumerate() {
            for (i, opt) in opts.iter().enumerate() {
                push_opt(format!("{}{}", D_GROUPS[k], level_name(i)), opt, &mut tensors);
            }
        }
        let mut replay = BTreeMap::new();
        for (k, bufs) in self.buffers.iter().enumerate() {
            for (i, b) in bufs.iter().enumerate() {
                let name = format!("{}{}", D_GROUPS[k], level_name(i));
                for (j, img) in b.images().iter().enumerate() {
                    tensors.push((format!("replay.{name}.{j}"), img.clone()));
                }
                replay.insert(name, (b.len(), b.swaps));
            }
        }
        (tensors, optimizers, replay)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (tensors, optimizers, replay) = self.archive_tensors();
        let meta = CheckpointMeta {
            format: checkpoint::FORMAT_VERSION,
            epoch: self.epoch,
            step: self.step,
            config_hash: self.config.hash(),
            config: self.config.to_toml(),
            best_val: self.best_val,
            optimizers,
            replay,
        };
        checkpoint::encode(&meta, tensors)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::write_atomic(path, &self.to_bytes()?)
    }

    /// Restores the full training state saved by [`Trainer::save_checkpoint`].
    pub fn from_checkpoint(path: &Path) -> Result<Trainer> {
        let archive = checkpoint::read(path)?;
        let config = archive.config(path)?;
        let mut t = Trainer::new(config)?;
        archive.restore_model(path, &t.model)?;
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let restore_opt = |name: &str, opt: &mut Adam| -> Result<()> {
            let names: Vec<String> = opt.params().iter().map(|(n, _)| n.clone()).collect();
            for n in names {
                let m = archive.take(path, &format!("opt.{name}.{n}.m"))?.clone();
                let v = archive.take(path, &format!("opt.{name}.{n}.v"))?.clone();
                opt.set_moment(&n, m, v).expect("known parameter");
            }
            opt.t = *archive
                .meta
                .optimizers
                .get(name)
                .ok_or_else(|| bad(format!("missing optimizer {name}")))?;
            Ok(())
        };
        restore_opt("g", &mut t.opt_g)?;
        for k in 0..2 {
            for i in 0..3 {
                let name = format!("{}{}", D_GROUPS[k], level_name(i));
                restore_opt(&name, &mut t.opt_d[k][i])?;
                let &(len, swaps) = archive
                    .meta
                    .replay
                    .get(&name)
                    .ok_or_else(|| bad(format!("missing replay buffer {name}")))?;
                let images = (0..len)
                    .map(|j| archive.take(path, &format!("replay.{name}.{j}")).cloned())
                    .collect::<Result<Vec<_>>>()?;
                t.buffers[k][i].restore(images, swaps);
            }
        }
        t.step = archive.meta.step;
        t.epoch = archive.meta.epoch;
        t.best_val = archive.meta.best_val;
        Ok(t)
    }

    /// Trains from the current epoch to the end of the schedule, writing
    /// `train_log.jsonl`, `val_log.jsonl` and checkpoints into `out_dir`.
    pub fn fit(&mut self, data: &Datasets, out_dir: &Path) -> Result<FitHistory> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let log_path = out_dir.join(LOG_NAME);
        let mut log = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let val_path = out_dir.join(VAL_LOG_NAME);
        let mut history = FitHistory::default();
        let tc = self.config.trainer.clone();
        let aug = self.config.dataset.augment();
        let last = tc.last_epoch();
        for epoch in (self.epoch + 1)..=last {
            let lr = lr_at_epoch(&tc, epoch)?;
            let mut epoch_g = 0.0;
            let mut steps = 0usize;
            for batch in epoch_batches(&data.train, tc.batch_size, &aug, self.config.seed, epoch) {
                let losses = self.train_step(&batch?, lr)?;
                let record = StepRecord {
                    step: self.step,
                    epoch,
                    lr,
                    losses,
                };
                writeln!(log, "{}", record.to_json()).map_err(|e| Error::io(&log_path, e))?;
                epoch_g += losses.generator.total;
                steps += 1;
                history.steps.push(record);
            }
            self.epoch = epoch;
            log::info!(
                "epoch {epoch}/{last} lr {lr:.3e} mean generator loss {:.4}",
                epoch_g / steps.max(1) as f64
            );

            let mut improved = false;
            if tc.validate {
                if let Some(v) = self.validate(&data.val)? {
                    log::info!("epoch {epoch} val ssim photo {:.4} sketch {:.4}", v.ssim_photo, v.ssim_sketch);
                    improved = self.best_val.is_none_or(|b| v.ssim_mean > b);
                    if improved {
                        self.best_val = Some(v.ssim_mean);
                    }
                    let mut f = std::fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&val_path)
                        .map_err(|e| Error::io(&val_path, e))?;
                    let line = serde_json::to_string(&v).expect("record serializes");
                    writeln!(f, "{line}").map_err(|e| Error::io(&val_path, e))?;
                    history.validation.push(v);
                }
            }

            let bytes = self.to_bytes()?;
            let mut targets = vec![out_dir.join(checkpoint::LAST_NAME)];
            if tc.checkpoint_interval > 0 && (epoch % tc.checkpoint_interval == 0 || epoch == last) {
                targets.push(out_dir.join(checkpoint::epoch_name(epoch)));
            }
            if improved {
                targets.push(out_dir.join(checkpoint::BEST_NAME));
            }
            for path in targets {
                checkpoint::write_atomic(&path, &bytes)?;
                history.checkpoints.push(path);
            }
        }
        Ok(history)
    }
}
