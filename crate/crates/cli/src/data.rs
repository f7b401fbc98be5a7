//! Dataset directories: the synth manifest and scene/prediction listings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mhparse::scene::{load_scene, LabeledScene, SceneConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "mhparse-manifest";

/// Full-size split counts; `synth --scale` multiplies them.
pub const SPLITS: [(&str, usize); 3] = [("train", 3000), ("val", 1000), ("test", 980)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub name: String,
    pub count: usize,
    /// Mean pairwise person-box IOU over the split.
    pub closeness: f64,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub scale: f64,
    pub scene: SceneConfig,
    pub splits: Vec<SplitEntry>,
}

impl Manifest {
    pub fn new(seed: u64, scale: f64, scene: SceneConfig, splits: Vec<SplitEntry>) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            seed,
            scale,
            scene,
            splits,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.format != MANIFEST_FORMAT || m.version != 1 {
            bail!("{}: not a version 1 manifest", path.display());
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Resolves `dir` to a directory of scene files: either the directory
/// itself or, for a dataset root, its `split` subdirectory.
pub fn split_dir(dir: &Path, split: &str) -> Result<PathBuf> {
    if !dir.join(MANIFEST).is_file() {
        return Ok(dir.to_path_buf());
    }
    let m = Manifest::load(dir)?;
    if !m.splits.iter().any(|s| s.name == split) {
        bail!("{} has no split named {split:?}", dir.display());
    }
    Ok(dir.join(split))
}

/// `*.json` files in `dir` sorted by name, skipping the manifest.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("listing {}", dir.display()))?;
    files.retain(|p| {
        p.extension().is_some_and(|e| e == "json") && p.file_name().is_some_and(|n| n != MANIFEST)
    });
    files.sort();
    Ok(files)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads every scene of a directory in parallel, keeping name order.
pub fn load_scenes(dir: &Path) -> Result<Vec<(String, LabeledScene)>> {
    let files = json_files(dir)?;
    if files.is_empty() {
        bail!("no scene files in {}", dir.display());
    }
    files
        .par_iter()
        .map(|p| {
            let scene = load_scene(p).with_context(|| format!("loading {}", p.display()))?;
            Ok((stem(p), scene))
        })
        .collect()
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
