use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mhparse::config::PipelineConfig;
use mhparse::instance::InstanceParsing;
use mhparse::numcore::Tensor;
use mhparse::parsernet::Checkpoint;
use mhparse::pipeline::{infer, InferenceOptions};
use mhparse::scene::{make_superpixels, save_prediction};
use rayon::prelude::*;

use crate::data::{create_dir, load_scenes};

pub struct InferArgs {
    /// `None` writes the ground truth itself as the prediction.
    pub checkpoint: Option<PathBuf>,
    pub gt_affinity: bool,
    pub gt_segmentation: bool,
    pub gt_count: bool,
    pub refine: bool,
    pub dump_affinity: bool,
}

fn affinity_csv(a: &Tensor) -> String {
    let mut out = String::new();
    for i in 0..a.rows() {
        let row: Vec<String> = (0..a.cols()).map(|j| a.get2(i, j).to_string()).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn run(cfg: &PipelineConfig, scenes_dir: &Path, out: &Path, args: &InferArgs) -> Result<()> {
    let scenes = load_scenes(scenes_dir)?;
    create_dir(out)?;
    let model = match &args.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            Some(ck.model)
        }
        None => None,
    };
    if model.is_none() && args.dump_affinity {
        bail!("--dump-affinity needs a checkpoint");
    }
    let opts = InferenceOptions {
        gt_affinity: args.gt_affinity,
        gt_segmentation: args.gt_segmentation,
        gt_count: args.gt_count,
        refine: args.refine || cfg.clustering.refine,
        theta: cfg.clustering.theta,
        seed: cfg.seed,
    };
    let target = cfg.scene.superpixel_target_size;
    let counts = scenes
        .par_iter()
        .map(|(name, scene)| {
            let pred = match &model {
                None => InstanceParsing::from_scene(scene),
                Some(model) => {
                    let sp = make_superpixels(scene, target)?;
                    let result = infer(model, &scene.image, &sp, Some(scene), &opts, &cfg.crf)
                        .with_context(|| format!("inference on {name}"))?;
                    if args.dump_affinity {
                        let path = out.join(format!("{name}.affinity.csv"));
                        std::fs::write(&path, affinity_csv(&result.affinity.affinity))
                            .with_context(|| format!("writing {}", path.display()))?;
                    }
                    result.prediction
                }
            };
            save_prediction(&pred, out.join(format!("{name}.json")))?;
            Ok(pred.instance_count())
        })
        .collect::<Result<Vec<_>>>()?;
    eprintln!(
        "wrote {} predictions ({} persons) to {}",
        counts.len(),
        counts.iter().sum::<usize>(),
        out.display()
    );
    Ok(())
}
