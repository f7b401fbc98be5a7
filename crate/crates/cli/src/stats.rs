use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use mhparse::metrics::mean_average_iou;
use mhparse::scene::{CATEGORY_NAMES, NUM_CLASSES};
use serde::{Deserialize, Serialize};

use crate::data::load_scenes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub id: u8,
    pub name: String,
    /// Pixels labelled with the category.
    pub pixels: u64,
    /// Persons showing at least one pixel of it.
    pub instances: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub scenes: usize,
    pub persons: usize,
    /// Mean pairwise person-box IOU per image, averaged over images.
    pub closeness: f64,
    /// Scene count per person count, index = persons.
    pub persons_histogram: Vec<usize>,
    pub categories: Vec<CategoryCount>,
}

pub fn run(scenes_dir: &Path) -> Result<DatasetStats> {
    let scenes: Vec<_> = load_scenes(scenes_dir)?.into_iter().map(|s| s.1).collect();
    let mut pixels = [0u64; NUM_CLASSES];
    let mut instances = [0u64; NUM_CLASSES];
    let mut hist = Vec::new();
    for s in &scenes {
        let p = s.person_count();
        if hist.len() <= p {
            hist.resize(p + 1, 0);
        }
        hist[p] += 1;
        for &c in s.part_labels.data() {
            pixels[c as usize] += 1;
        }
        for mask in &s.person_masks {
            let mut seen = [false; NUM_CLASSES];
            for (&on, &c) in mask.data().iter().zip(s.part_labels.data()) {
                seen[c as usize] |= on;
            }
            for c in 1..NUM_CLASSES {
                instances[c] += seen[c] as u64;
            }
        }
    }
    Ok(DatasetStats {
        scenes: scenes.len(),
        persons: scenes.iter().map(|s| s.person_count()).sum(),
        closeness: mean_average_iou(&scenes),
        persons_histogram: hist,
        categories: (1..NUM_CLASSES)
            .map(|c| CategoryCount {
                id: c as u8,
                name: CATEGORY_NAMES[c].to_string(),
                pixels: pixels[c],
                instances: instances[c],
            })
            .collect(),
    })
}

pub fn table(s: &DatasetStats) -> String {
    let mut out = format!(
        "{} scenes, {} persons, closeness {:.2}%\n\n{:<4} {:<15} {:>9} {:>9}\n",
        s.scenes,
        s.persons,
        100.0 * s.closeness,
        "id",
        "category",
        "pixels",
        "persons"
    );
    for c in &s.categories {
        let _ = writeln!(out, "{:<4} {:<15} {:>9} {:>9}", c.id, c.name, c.pixels, c.instances);
    }
    out
}
