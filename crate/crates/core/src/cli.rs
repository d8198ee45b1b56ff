//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::data::{load_dataset, synthetic, Datasets};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_run, Evaluation};
use crate::models::Direction;
use crate::synthesis::{synthesize_directory, SynthOptions, Synthesizer};
use crate::trainer::{checkpoint, Trainer};

pub const ABLATION_MASKS: [(&str, &[usize]); 3] = [
    ("C-D256", &[256]),
    ("C-D256,128", &[256, 128]),
    ("C-D256,128,64", &[256, 128, 64]),
];

#[derive(Debug, Parser)]
#[command(name = "ps2man", version, about = "Multi-resolution adversarial photo/sketch synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults apply to anything omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a key, `section.key=value` or a unique bare `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Top-level seed (same as `--set seed=N`).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Config> {
        let base = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let mut overrides = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        base.with_overrides(&overrides)
    }
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory. Defaults to `$PS2MAN_OUT`, then `runs`.
    #[arg(long, env = "PS2MAN_OUT", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train both generators and all active discriminators.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train and evaluate the three discriminator-level configurations.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArg,
        /// Print the resolved configurations without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Translate a directory of images with a trained checkpoint.
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = ["photo2sketch", "sketch2photo"])]
        direction: String,
        #[command(flatten)]
        out: OutArg,
        /// Ground-truth directory, matched by file stem, for the comparison grid.
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Eye annotations; defaults to `landmarks.txt` inside the input directory.
        #[arg(long)]
        landmarks: Option<PathBuf>,
        #[arg(long)]
        no_grid: bool,
    },
    /// Score a checkpoint on the test split: IQA and matching reports.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset root; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Write a procedural paired face dataset (photos, sketches, landmarks).
    MakeSynthetic {
        #[command(flatten)]
        out: OutArg,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_data(cfg: &Config) -> Result<Datasets> {
    let d = &cfg.dataset;
    log::info!("loading dataset from {}", d.root.display());
    load_dataset(&d.root, &d.split_spec(cfg.seed), &d.geometry())
}

fn train(cfg: Config, out: &Path, resume: Option<&Path>) -> Result<Trainer> {
    let data = load_data(&cfg)?;
    let mut trainer = match resume {
        Some(p) => {
            let t = Trainer::from_checkpoint(p)?;
            if t.config.hash() != cfg.hash() {
                log::warn!("resuming with the configuration stored in {}", p.display());
            }
            t
        }
        None => Trainer::new(cfg)?,
    };
    trainer.config.write_resolved(out)?;
    let history = trainer.fit(&data, out)?;
    log::info!("{} steps, {} checkpoint writes", history.steps.len(), history.checkpoints.len());
    Ok(trainer)
}

fn evaluate(trainer_cfg: &Config, model: &crate::models::CycleModel, out: &Path) -> Result<Evaluation> {
    let data = load_data(trainer_cfg)?;
    let eval = evaluate_run(model, &data.test, &trainer_cfg.metrics)?;
    eval.write_reports(out)?;
    Ok(eval)
}

/// Rows SSIM/FSIM x photo/sketch synthesis, one column per configuration.
pub fn ablation_table(columns: &[(&str, Evaluation)]) -> String {
    let mut s = format!("{:<26}", "metric");
    for (name, _) in columns {
        s += &format!("{name:>16}");
    }
    s.push('\n');
    let rows: [(&str, fn(&Evaluation) -> f64); 4] = [
        ("SSIM (Photo Synthesis)", |e| e.iqa_for(Direction::SketchToPhoto).mean_ssim()),
        ("SSIM (Sketch Synthesis)", |e| e.iqa_for(Direction::PhotoToSketch).mean_ssim()),
        ("FSIM (Photo Synthesis)", |e| e.iqa_for(Direction::SketchToPhoto).mean_fsim()),
        ("FSIM (Sketch Synthesis)", |e| e.iqa_for(Direction::PhotoToSketch).mean_fsim()),
    ];
    for (label, f) in rows {
        s += &format!("{label:<26}");
        for (_, e) in columns {
            s += &format!("{:>16.4}", f(e));
        }
        s.push('\n');
    }
    s
}

pub fn ablation_configs(base: &Config) -> Result<Vec<(&'static str, Config)>> {
    ABLATION_MASKS
        .iter()
        .map(|(name, levels)| {
            let list = levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
            Ok((*name, base.with_overrides(&[format!("trainer.levels=[{list}]")])?))
        })
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, resume } => {
            let cfg = config.resolve()?;
            train(cfg, &out.out, resume.as_deref())?;
        }
        Command::Ablate { config, out, dry_run } => {
            let configs = ablation_configs(&config.resolve()?)?;
            if dry_run {
                for (name, cfg) in &configs {
                    println!("# {name}\n{}", cfg.to_toml());
                }
                return Ok(());
            }
            let mut columns = Vec::new();
            for (name, cfg) in configs {
                let dir = out.out.join(name);
                let trainer = train(cfg.clone(), &dir, None)?;
                columns.push((name, evaluate(&cfg, &trainer.model, &dir)?));
            }
            let table = ablation_table(&columns);
            print!("{table}");
            let path = out.out.join("ablation.txt");
            std::fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
        }
        Command::Synth {
            ckpt,
            input,
            direction,
            out,
            targets,
            landmarks,
            no_grid,
        } => {
            let synth = Synthesizer::load(&ckpt)?;
            let opts = SynthOptions {
                landmarks,
                targets,
                grid: !no_grid,
            };
            let manifest = synthesize_directory(&synth, &input, direction.parse()?, &out.out, &opts)?;
            log::info!("wrote {} of {} images to {}", manifest.written(), manifest.rows.len(), out.out.display());
        }
        Command::Eval { ckpt, input, set, out } => {
            let (model, stored) = checkpoint::load_model(&ckpt)?;
            let mut overrides = set;
            if let Some(root) = input {
                overrides.push(format!("dataset.root={:?}", root.display().to_string()));
            }
            let cfg = stored.with_overrides(&overrides)?;
            let eval = evaluate(&cfg, &model, &out.out)?;
            for (k, v) in eval.summary() {
                println!("{k}\t{v:.4}");
            }
        }
        Command::MakeSynthetic { out, count, seed } => {
            synthetic::generate_dataset(&out.out, count, seed)?;
            log::info!("wrote {count} synthetic pairs to {}", out.out.display());
        }
    }
    Ok(())
}
