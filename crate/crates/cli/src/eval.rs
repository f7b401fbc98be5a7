use std::path::Path;

use anyhow::{bail, Context, Result};
use mhparse::instance::InstanceParsing;
use mhparse::metrics::{evaluate, MetricReport};
use mhparse::scene::load_prediction;
use rayon::prelude::*;

use crate::data::load_scenes;

/// Scores every ground-truth scene against the prediction of the same name;
/// a missing prediction counts as an empty one.
pub fn run(pred_dir: &Path, gt_dir: &Path, thresholds: &[f64]) -> Result<MetricReport> {
    if !pred_dir.is_dir() {
        bail!("prediction directory {} does not exist", pred_dir.display());
    }
    let scenes = load_scenes(gt_dir)?;
    let preds = scenes
        .par_iter()
        .map(|(name, scene)| {
            let path = pred_dir.join(format!("{name}.json"));
            if !path.exists() {
                return Ok((InstanceParsing::empty(scene.height(), scene.width()), true));
            }
            let p = load_prediction(&path).with_context(|| format!("loading {}", path.display()))?;
            if p.instance_ids.height() != scene.height() || p.instance_ids.width() != scene.width() {
                bail!("{}: size differs from its ground truth", path.display());
            }
            Ok((p, false))
        })
        .collect::<Result<Vec<_>>>()?;
    let missing = preds.iter().filter(|p| p.1).count();
    if missing > 0 {
        eprintln!("{missing} of {} scenes have no prediction and count as empty", scenes.len());
    }
    let preds: Vec<InstanceParsing> = preds.into_iter().map(|p| p.0).collect();
    let names: Vec<String> = scenes.iter().map(|s| s.0.clone()).collect();
    let gts: Vec<InstanceParsing> = scenes.iter().map(|s| InstanceParsing::from_scene(&s.1)).collect();
    let masks: Vec<_> = scenes.iter().map(|s| s.1.person_masks.clone()).collect();
    Ok(evaluate(&names, &preds, &gts, &masks, thresholds)?)
}
