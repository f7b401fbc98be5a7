use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mhparse::config::PipelineConfig;
use mhparse::graphgan::{GcnParams, LossRecord, Trainer, TrainingExample};
use mhparse::parsernet::{Checkpoint, ModelParams};
use rayon::prelude::*;

use crate::data::{create_dir, load_scenes};

pub const CHECKPOINT: &str = "checkpoint.json";
pub const LOSSES: &str = "losses.csv";

fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let disc = trainer.disc.as_ref().map(|d| d.tensors.clone());
    Checkpoint::new(trainer.model.clone(), disc)
        .save(path)
        .with_context(|| format!("writing {}", path.display()))
}

fn write_losses(records: &[LossRecord], path: &Path) -> Result<()> {
    let mut csv = String::from(LossRecord::CSV_HEADER);
    csv.push('\n');
    for r in records {
        writeln!(csv, "{}", r.csv_row())?;
    }
    std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cfg: &PipelineConfig, scenes_dir: &Path, out: &Path, adversarial: bool) -> Result<()> {
    let scenes = load_scenes(scenes_dir)?;
    let target = cfg.scene.superpixel_target_size;
    let examples = scenes
        .par_iter()
        .map(|(name, s)| TrainingExample::new(s, target).with_context(|| format!("preparing {name}")))
        .collect::<Result<Vec<_>>>()?;
    let largest = examples.iter().map(|e| e.superpixels.count).max().unwrap_or(0);
    let disc = if adversarial && cfg.gan.lambda > 0.0 {
        if largest > cfg.gan.discriminator.max_nodes {
            bail!(
                "a training scene has {largest} superpixels but the discriminator holds at most {}; \
                 raise gan.discriminator.max_nodes or scene.superpixel_target_size",
                cfg.gan.discriminator.max_nodes
            );
        }
        Some(GcnParams::init(cfg.gan.discriminator, cfg.seed.wrapping_add(1))?)
    } else {
        None
    };
    let model = ModelParams::init(cfg.model, cfg.seed)?;
    let mut trainer = Trainer::new(model, disc, cfg.gan)?;
    create_dir(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()).context("writing config.toml")?;

    let steps = cfg.training.steps;
    let chunk = match cfg.training.checkpoint_every {
        0 => steps.max(1),
        k => k,
    };
    let report_every = (steps / 10).max(1);
    let mut records = Vec::with_capacity(steps);
    eprintln!(
        "training on {} scenes for {steps} steps ({})",
        examples.len(),
        if trainer.disc.is_some() { "adversarial" } else { "generator only" }
    );
    while trainer.steps_taken() < steps {
        let n = chunk.min(steps - trainer.steps_taken());
        trainer.run(&examples, n, cfg.training.batch_size, |r| {
            if r.step % report_every == 0 || r.step + 1 == steps {
                eprintln!("step {:>5}  seg {:.4}  l2 {:.2}  count {:.3}", r.step, r.seg, r.l2, r.count);
            }
            records.push(*r);
        })?;
        if cfg.training.checkpoint_every > 0 && trainer.steps_taken() < steps {
            save_checkpoint(&trainer, &out.join(format!("checkpoint_{:06}.json", trainer.steps_taken())))?;
        }
    }
    save_checkpoint(&trainer, &out.join(CHECKPOINT))?;
    write_losses(&records, &out.join(LOSSES))
}
