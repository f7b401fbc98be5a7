//! Binary PPM visualisations of scenes and predictions.

use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use mhparse::instance::InstanceParsing;
use mhparse::palette::{instance_color, PALETTE};
use mhparse::scene::{load_prediction, load_scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    /// One colour per person instance.
    Instances,
    /// Fixed colour per part category.
    Parts,
}

pub fn ppm(p: &InstanceParsing, mode: RenderMode) -> Vec<u8> {
    let (h, w) = (p.instance_ids.height(), p.instance_ids.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for (&id, &c) in p.instance_ids.data().iter().zip(p.categories.data()) {
        out.extend(match mode {
            RenderMode::Instances => instance_color(id),
            RenderMode::Parts => PALETTE[c as usize],
        });
    }
    out
}

/// Reads either annotation format; scenes are shown through their ground
/// truth so that a scene and its identity prediction render alike.
pub fn load_any(path: &Path) -> Result<InstanceParsing> {
    match load_scene(path) {
        Ok(scene) => Ok(InstanceParsing::from_scene(&scene)),
        Err(scene_err) => load_prediction(path)
            .with_context(|| format!("{} is neither a scene ({scene_err}) nor a prediction", path.display())),
    }
}

pub fn run(input: &Path, out: &Path, mode: RenderMode) -> Result<()> {
    let p = load_any(input)?;
    std::fs::write(out, ppm(&p, mode)).with_context(|| format!("writing {}", out.display()))
}
