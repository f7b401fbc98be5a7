//! Labeled multi-person scenes: data types, the procedural generator, the
//! superpixel partition and the JSON annotation format.

mod generate;
mod grid;
mod io;
mod superpixel;

pub use generate::{generate_scene, SceneConfig};
pub use grid::Grid;
pub use io::{
    load_prediction, load_scene, prediction_from_json, prediction_to_json, save_prediction, save_scene,
    scene_from_json, scene_to_json,
};
pub use superpixel::{make_superpixels, slic, SuperpixelMap, DEFAULT_COMPACTNESS};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Number of label classes: 18 part categories plus background.
pub const NUM_CLASSES: usize = 19;
pub const BACKGROUND: u8 = 0;

/// Part category names, indexed by id; id 0 is background.
pub const CATEGORY_NAMES: [&str; NUM_CLASSES] = [
    "background",
    "hat",
    "hair",
    "sun glasses",
    "upper clothes",
    "skirt",
    "pants",
    "dress",
    "belt",
    "left shoe",
    "right shoe",
    "face",
    "left leg",
    "right leg",
    "left arm",
    "right arm",
    "bag",
    "scarf",
    "torso skin",
];

/// One image with instance-aware part annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    /// `H×W×3`, values in `[0, 1]`.
    pub image: Tensor,
    pub person_masks: Vec<Grid<bool>>,
    pub part_labels: Grid<u8>,
}

impl LabeledScene {
    /// Validates every invariant: pairwise disjoint person masks, part labels
    /// non-zero exactly on person pixels, at least one person.
    pub fn new(image: Tensor, person_masks: Vec<Grid<bool>>, part_labels: Grid<u8>) -> Result<Self> {
        let (h, w) = (part_labels.height(), part_labels.width());
        if image.shape() != [h, w, 3] {
            return Err(Error::Invariant(format!(
                "image shape {:?} does not match label grid {h}x{w}",
                image.shape()
            )));
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invariant("image values outside [0, 1]".into()));
        }
        if person_masks.is_empty() {
            return Err(Error::Invariant("scene has no persons".into()));
        }
        let mut covered = vec![false; h * w];
        for (i, mask) in person_masks.iter().enumerate() {
            if mask.height() != h || mask.width() != w {
                return Err(Error::Invariant(format!("person mask {i} has wrong dimensions")));
            }
            for (k, &m) in mask.data().iter().enumerate() {
                if m {
                    if covered[k] {
                        return Err(Error::Invariant(format!(
                            "person masks overlap at pixel ({}, {})",
                            k / w,
                            k % w
                        )));
                    }
                    covered[k] = true;
                }
            }
        }
        for (k, &label) in part_labels.data().iter().enumerate() {
            if label as usize >= NUM_CLASSES {
                return Err(Error::Invariant(format!("part label {label} out of range")));
            }
            if (label != BACKGROUND) != covered[k] {
                return Err(Error::Invariant(format!(
                    "part label {label} inconsistent with person coverage at pixel ({}, {})",
                    k / w,
                    k % w
                )));
            }
        }
        Ok(Self {
            image,
            person_masks,
            part_labels,
        })
    }

    pub fn height(&self) -> usize {
        self.part_labels.height()
    }

    pub fn width(&self) -> usize {
        self.part_labels.width()
    }

    pub fn person_count(&self) -> usize {
        self.person_masks.len()
    }

    /// Nearest-neighbour subsampling by an integer factor. Persons that
    /// vanish are dropped; fails if none survive.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::arg("downsample factor must be positive"));
        }
        let (h, w) = (self.height() / factor, self.width() / factor);
        let mut image = Tensor::zeros(&[h, w, 3]);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let src = ((y * factor) * self.width() + x * factor) * 3 + c;
                    image.data_mut()[(y * w + x) * 3 + c] = self.image.data()[src];
                }
            }
        }
        let sub = |g: &Grid<bool>| Grid::from_fn(h, w, |y, x| g.get(y * factor, x * factor));
        let masks: Vec<_> = self
            .person_masks
            .iter()
            .map(sub)
            .filter(|m| m.data().iter().any(|&v| v))
            .collect();
        let labels = Grid::from_fn(h, w, |y, x| self.part_labels.get(y * factor, x * factor));
        Self::new(image, masks, labels)
    }

    /// Tight bounding box `(y0, x0, y1, x1)` (exclusive ends) of person `i`.
    pub fn person_bbox(&self, i: usize) -> Option<(usize, usize, usize, usize)> {
        self.person_masks[i].bbox()
    }
}
