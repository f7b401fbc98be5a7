//! `mhparse`: synthesize data, train, infer, evaluate, summarise and render.

mod data;
mod eval;
mod infer;
mod render;
mod stats;
mod synth;
mod train;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mhparse::config::PipelineConfig;

#[derive(Parser)]
#[command(name = "mhparse", version, about = "Bottom-up multi-human parsing pipeline")]
struct Cli {
    /// TOML pipeline configuration; omitted sections keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed (and MHPARSE_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core. Output never depends on it.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a train/val/test dataset of synthetic scenes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Multiplier on the 3000/1000/980 split sizes.
        #[arg(long, default_value_t = 0.02)]
        scale: f64,
    },
    /// Train the parsing network, with the graph discriminator unless disabled.
    Train {
        /// Dataset root (its train split is used) or a directory of scenes.
        #[arg(long)]
        data: PathBuf,
        /// Run directory for checkpoints and the loss log.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Train the generator alone.
        #[arg(long)]
        no_gan: bool,
    },
    /// Predict instance-aware parsings for a directory of scenes.
    Infer {
        /// Checkpoint written by `train`.
        #[arg(long, required_unless_present = "ground_truth")]
        checkpoint: Option<PathBuf>,
        /// Dataset root (its test split is used) or a directory of scenes.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write each scene's ground truth as its prediction.
        #[arg(long, conflicts_with = "checkpoint")]
        ground_truth: bool,
        #[arg(long)]
        gt_affinity: bool,
        #[arg(long)]
        gt_segmentation: bool,
        #[arg(long)]
        gt_count: bool,
        /// Refine the instance masks with the dense CRF.
        #[arg(long)]
        refine: bool,
        /// Also write each affinity matrix as `<scene>.affinity.csv`.
        #[arg(long)]
        dump_affinity: bool,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        /// Dataset root (its test split is used) or a directory of scenes.
        #[arg(long)]
        gt_dir: PathBuf,
        /// AP^p thresholds to report, e.g. 0.5,0.7.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset statistics: closeness and per-category pixel counts.
    Stats {
        /// Dataset root or a directory of scenes.
        #[arg(long)]
        data: PathBuf,
        /// Split to read when `data` is a dataset root.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a scene or prediction as a binary PPM image.
    Render {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = render::RenderMode::Instances)]
        mode: render::RenderMode,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    let mut cfg = cfg.with_env_seed()?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => std::fs::write(path, json).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .context("starting the worker pool")?;
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth { out, scale } => {
            let m = synth::run(&cfg, out, *scale)?;
            for s in &m.splits {
                println!("{:<6} {:>5} scenes  closeness {:.2}%", s.name, s.count, 100.0 * s.closeness);
            }
        }
        Command::Train {
            data,
            out,
            steps,
            batch_size,
            no_gan,
        } => {
            cfg.training.steps = steps.unwrap_or(cfg.training.steps);
            cfg.training.batch_size = batch_size.unwrap_or(cfg.training.batch_size);
            cfg.validate()?;
            train::run(&cfg, &data::split_dir(data, "train")?, out, !no_gan)?;
        }
        Command::Infer {
            checkpoint,
            input,
            out,
            ground_truth,
            gt_affinity,
            gt_segmentation,
            gt_count,
            refine,
            dump_affinity,
        } => {
            let args = infer::InferArgs {
                checkpoint: if *ground_truth { None } else { checkpoint.clone() },
                gt_affinity: *gt_affinity,
                gt_segmentation: *gt_segmentation,
                gt_count: *gt_count,
                refine: *refine,
                dump_affinity: *dump_affinity,
            };
            infer::run(&cfg, &data::split_dir(input, "test")?, out, &args)?;
        }
        Command::Eval {
            pred_dir,
            gt_dir,
            thresholds,
            out,
        } => {
            let thresholds = thresholds.clone().unwrap_or_else(|| cfg.metrics.thresholds.clone());
            let report = eval::run(pred_dir, &data::split_dir(gt_dir, "test")?, &thresholds)?;
            if out.is_some() {
                print!("{}", report.table());
            } else {
                eprint!("{}", report.table());
            }
            emit_json(&report, out.as_deref())?;
        }
        Command::Stats { data, split, out } => {
            let s = stats::run(&data::split_dir(data, split)?)?;
            if out.is_some() {
                print!("{}", stats::table(&s));
            } else {
                eprint!("{}", stats::table(&s));
            }
            emit_json(&s, out.as_deref())?;
        }
        Command::Render { input, out, mode } => render::run(input, out, *mode)?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn instance_colors_are_distinct() {
        let mut seen = std::collections::BTreeSet::new();
        for id in 0..=16u16 {
            assert!(seen.insert(mhparse::palette::instance_color(id)), "colour of {id} repeats");
        }
    }

    #[test]
    fn split_sizes_scale() {
        let c = synth::split_counts(0.02).unwrap();
        assert_eq!(c, vec![("train", 60), ("val", 20), ("test", 20)]);
        assert_eq!(synth::split_counts(1.0).unwrap()[2].1, 980);
        assert!(synth::split_counts(0.0).is_err());
        assert!(synth::split_counts(-1.0).is_err());
    }
}
