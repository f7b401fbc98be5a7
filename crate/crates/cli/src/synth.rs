use std::path::Path;

use anyhow::{bail, Context, Result};
use mhparse::config::PipelineConfig;
use mhparse::metrics::mean_average_iou;
use mhparse::scene::{generate_scene, save_scene, SceneConfig};
use rayon::prelude::*;

use crate::data::{create_dir, Manifest, SplitEntry, SPLITS};

/// Seed of the `index`-th scene of a dataset. Distinct indices never
/// collide for one base seed.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

pub fn split_counts(scale: f64) -> Result<Vec<(&'static str, usize)>> {
    if !(scale.is_finite() && scale > 0.0) {
        bail!("--scale must be a positive number, got {scale}");
    }
    Ok(SPLITS.iter().map(|&(name, n)| (name, ((n as f64 * scale).round() as usize).max(1))).collect())
}

pub fn run(cfg: &PipelineConfig, out: &Path, scale: f64) -> Result<Manifest> {
    let counts = split_counts(scale)?;
    create_dir(out)?;
    let mut offset = 0;
    let mut splits = Vec::new();
    for (name, count) in counts {
        let dir = out.join(name);
        create_dir(&dir)?;
        let scenes = (0..count)
            .into_par_iter()
            .map(|i| {
                let sc = SceneConfig {
                    seed: scene_seed(cfg.seed, offset + i),
                    ..cfg.scene.clone()
                };
                let scene = generate_scene(&sc).with_context(|| format!("generating {name} scene {i}"))?;
                let file = format!("{i:05}.json");
                save_scene(&scene, dir.join(&file))?;
                Ok((file, scene))
            })
            .collect::<Result<Vec<_>>>()?;
        offset += count;
        let (files, scenes): (Vec<String>, Vec<_>) = scenes.into_iter().unzip();
        eprintln!("{name}: {count} scenes");
        splits.push(SplitEntry {
            name: name.to_string(),
            count,
            closeness: mean_average_iou(&scenes),
            files,
        });
    }
    let manifest = Manifest::new(cfg.seed, scale, cfg.scene.clone(), splits);
    manifest.save(out)?;
    Ok(manifest)
}
