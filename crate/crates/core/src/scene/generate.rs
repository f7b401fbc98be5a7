//! Procedural multi-person scenes.
//!
//! Each person is a layered assembly of simple shapes, one per part category.
//! Colour carries two independent signals: the chroma of a pixel is fixed by
//! its part category (a palette of 18 hues on two rings), and its luminance
//! by the person it belongs to (persons in one scene get evenly spaced
//! luminance levels in random order). Persons are placed side by side with a
//! controllable horizontal overlap and composited in random depth order, so
//! entangled and partly occluded instances occur.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Grid, LabeledScene, BACKGROUND};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const HAT: u8 = 1;
const HAIR: u8 = 2;
const SUNGLASSES: u8 = 3;
const UPPER_CLOTHES: u8 = 4;
const SKIRT: u8 = 5;
const PANTS: u8 = 6;
const DRESS: u8 = 7;
const BELT: u8 = 8;
const LEFT_SHOE: u8 = 9;
const RIGHT_SHOE: u8 = 10;
const FACE: u8 = 11;
const LEFT_LEG: u8 = 12;
const RIGHT_LEG: u8 = 13;
const LEFT_ARM: u8 = 14;
const RIGHT_ARM: u8 = 15;
const BAG: u8 = 16;
const SCARF: u8 = 17;
const TORSO_SKIN: u8 = 18;

const PLACEMENT_ATTEMPTS: usize = 200;
/// Fraction of a person's own pixels that must stay visible after occlusion.
const MIN_VISIBLE_FRACTION: f64 = 0.45;
const MIN_VISIBLE_PIXELS: usize = 48;
const PIXEL_NOISE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub min_persons: usize,
    pub max_persons: usize,
    /// Target mean person count; counts are `min_persons + Poisson(mean − min)`.
    pub mean_persons: f64,
    /// Upper bound on the horizontal overlap between neighbouring persons, as
    /// a fraction of person width.
    pub max_overlap: f64,
    pub seed: u64,
    pub superpixel_target_size: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            min_persons: 2,
            max_persons: 16,
            mean_persons: 3.0,
            max_overlap: 0.45,
            seed: 0,
            superpixel_target_size: 32,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2 <= self.min_persons && self.min_persons <= self.max_persons && self.max_persons <= 16) {
            return Err(Error::Config(format!(
                "person range [{}, {}] must satisfy 2 <= min <= max <= 16",
                self.min_persons, self.max_persons
            )));
        }
        if self.height < 32 || self.width < 32 {
            return Err(Error::Config(format!(
                "scene size {}x{} below 32x32",
                self.height, self.width
            )));
        }
        if !(self.min_persons as f64..=self.max_persons as f64).contains(&self.mean_persons) {
            return Err(Error::Config("mean_persons outside [min_persons, max_persons]".into()));
        }
        if !(0.0..0.9).contains(&self.max_overlap) {
            return Err(Error::Config("max_overlap must lie in [0, 0.9)".into()));
        }
        if self.superpixel_target_size < 4 {
            return Err(Error::Config("superpixel_target_size must be at least 4".into()));
        }
        Ok(())
    }
}

/// Chroma `(a, b)` of a part category; background is achromatic.
fn part_chroma(label: u8) -> (f64, f64) {
    if label == BACKGROUND {
        return (0.0, 0.0);
    }
    let c = (label - 1) as f64;
    let ring = (label - 1) % 2;
    let angle = std::f64::consts::TAU * (c / 2.0).floor() / 9.0 + ring as f64 * std::f64::consts::PI / 9.0;
    let radius = if ring == 0 { 0.11 } else { 0.2 };
    (radius * angle.cos(), radius * angle.sin())
}

fn to_rgb(l: f64, (a, b): (f64, f64)) -> [f64; 3] {
    let s3 = 3f64.sqrt() / 2.0;
    [l + a, l - 0.5 * a + s3 * b, l - 0.5 * a - s3 * b]
}

/// Which optional garments and accessories a person wears.
#[derive(Debug, Clone, Copy)]
struct Outfit {
    hat: bool,
    sunglasses: bool,
    scarf: bool,
    belt: bool,
    bag: bool,
    dress: bool,
    skirt: bool,
}

#[derive(Debug, Clone, Copy)]
struct Placement {
    cx: f64,
    top: f64,
    height: f64,
    outfit: Outfit,
}

/// Renders one person's own part labels (0 = not covered), ignoring occlusion.
fn draw_person(p: &Placement, h: usize, w: usize) -> Grid<u8> {
    let mut g = Grid::filled(h, w, BACKGROUND);
    let ph = p.height;
    let (cx, top) = (p.cx, p.top);
    let rect = |label: u8, x0: f64, x1: f64, y0: f64, y1: f64, g: &mut Grid<u8>| {
        for y in 0..h {
            let py = y as f64 + 0.5;
            if py < top + y0 * ph || py >= top + y1 * ph {
                continue;
            }
            for x in 0..w {
                let px = x as f64 + 0.5;
                if px >= cx + x0 * ph && px < cx + x1 * ph {
                    g.set(y, x, label);
                }
            }
        }
    };
    let o = p.outfit;

    // legs and shoes (person's left is image right)
    rect(LEFT_LEG, 0.005, 0.095, 0.5, 0.92, &mut g);
    rect(RIGHT_LEG, -0.095, -0.005, 0.5, 0.92, &mut g);
    rect(LEFT_SHOE, 0.0, 0.11, 0.92, 1.0, &mut g);
    rect(RIGHT_SHOE, -0.11, 0.0, 0.92, 1.0, &mut g);
    if o.dress {
        // flared dress drawn as stacked bands
        for band in 0..6 {
            let y0 = 0.23 + band as f64 * 0.09;
            let half = 0.11 + band as f64 * 0.012;
            rect(DRESS, -half, half, y0, y0 + 0.09, &mut g);
        }
    } else {
        if o.skirt {
            for band in 0..3 {
                let y0 = 0.5 + band as f64 * 0.08;
                let half = 0.11 + band as f64 * 0.015;
                rect(SKIRT, -half, half, y0, y0 + 0.08, &mut g);
            }
        } else {
            rect(PANTS, -0.1, 0.1, 0.5, 0.9, &mut g);
        }
        rect(UPPER_CLOTHES, -0.11, 0.11, 0.23, 0.52, &mut g);
        if o.belt {
            rect(BELT, -0.11, 0.11, 0.49, 0.53, &mut g);
        }
    }
    rect(TORSO_SKIN, -0.035, 0.035, 0.18, 0.25, &mut g);
    rect(LEFT_ARM, 0.11, 0.16, 0.24, 0.56, &mut g);
    rect(RIGHT_ARM, -0.16, -0.11, 0.24, 0.56, &mut g);
    if o.scarf {
        rect(SCARF, -0.08, 0.08, 0.2, 0.25, &mut g);
    }

    // head: face disc with hair on the upper part
    let (hcx, hcy, r) = (cx, top + 0.11 * ph, 0.085 * ph);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let d2 = (px - hcx).powi(2) + (py - hcy).powi(2);
            if d2 <= r * r {
                let label = if py < hcy - 0.35 * r { HAIR } else { FACE };
                g.set(y, x, label);
            }
        }
    }
    if o.sunglasses {
        rect(SUNGLASSES, -0.06, 0.06, 0.1, 0.135, &mut g);
    }
    if o.hat {
        rect(HAT, -0.1, 0.1, 0.0, 0.055, &mut g);
    }
    if o.bag {
        rect(BAG, 0.16, 0.24, 0.38, 0.55, &mut g);
    }
    g
}

fn random_outfit(rng: &mut ChaCha8Rng) -> Outfit {
    let dress = rng.random_bool(0.2);
    Outfit {
        hat: rng.random_bool(0.35),
        sunglasses: rng.random_bool(0.3),
        scarf: rng.random_bool(0.25),
        belt: !dress && rng.random_bool(0.3),
        bag: rng.random_bool(0.25),
        dress,
        skirt: !dress && rng.random_bool(0.35),
    }
}

fn sample_person_count(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> usize {
    let extra = cfg.mean_persons - cfg.min_persons as f64;
    if extra <= 0.0 {
        return cfg.min_persons;
    }
    let poisson = Poisson::new(extra).expect("positive rate");
    loop {
        let p = cfg.min_persons + poisson.sample(rng) as usize;
        if p <= cfg.max_persons {
            return p;
        }
    }
}

/// Tries to place `count` persons so every one keeps enough visible pixels.
/// Returns the composited owner map (person index + 1) and part labels.
fn try_layout(
    cfg: &SceneConfig,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<Placement>, Grid<u16>, Grid<u8>)> {
    let (h, w) = (cfg.height, cfg.width);
    let crowd = (2.5 / count as f64).sqrt().min(1.0);
    let mut placements = Vec::with_capacity(count);
    let heights: Vec<f64> = (0..count)
        .map(|_| h as f64 * rng.random_range(0.6..0.92) * crowd)
        .collect();
    let widths: Vec<f64> = heights.iter().map(|ph| 0.4 * ph).collect();

    // left-to-right chain with random overlap between neighbours
    let mut centers = vec![widths[0] / 2.0];
    for i in 1..count {
        let overlap = rng.random_range(0.0..=cfg.max_overlap);
        let gap = (widths[i - 1] + widths[i]) / 2.0 * (1.0 - overlap);
        centers.push(centers[i - 1] + gap);
    }
    let span = centers[count - 1] + widths[count - 1] / 2.0;
    if span > w as f64 {
        return None;
    }
    let shift = rng.random_range(0.0..=(w as f64 - span));
    for i in 0..count {
        let top = rng.random_range(0.0..=(h as f64 - heights[i]).max(0.0));
        placements.push(Placement {
            cx: centers[i] + shift,
            top,
            height: heights[i],
            outfit: random_outfit(rng),
        });
    }

    let own: Vec<Grid<u8>> = placements.iter().map(|p| draw_person(p, h, w)).collect();
    let mut depth: Vec<usize> = (0..count).collect();
    depth.shuffle(rng);

    let mut owner = Grid::filled(h, w, 0u16);
    let mut labels = Grid::filled(h, w, BACKGROUND);
    for &i in &depth {
        for k in 0..h * w {
            let l = own[i].data()[k];
            if l != BACKGROUND {
                owner.data_mut()[k] = i as u16 + 1;
                labels.data_mut()[k] = l;
            }
        }
    }
    for (i, g) in own.iter().enumerate() {
        let total = g.data().iter().filter(|&&l| l != BACKGROUND).count();
        let visible = owner.data().iter().filter(|&&o| o as usize == i + 1).count();
        if visible < MIN_VISIBLE_PIXELS || (visible as f64) < MIN_VISIBLE_FRACTION * total as f64 {
            return None;
        }
    }
    Some((placements, owner, labels))
}

/// Generates one scene; deterministic in `cfg` (including `cfg.seed`).
///
/// If the sampled person count does not fit, fewer persons are tried, down to
/// `min_persons`; failing that the scene cannot be generated.
pub fn generate_scene(cfg: &SceneConfig) -> Result<LabeledScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let target = sample_person_count(cfg, &mut rng);

    let mut layout = None;
    'outer: for count in (cfg.min_persons..=target).rev() {
        for _ in 0..PLACEMENT_ATTEMPTS {
            if let Some(l) = try_layout(cfg, count, &mut rng) {
                layout = Some(l);
                break 'outer;
            }
        }
    }
    let (placements, owner, labels) = layout.ok_or_else(|| {
        Error::Generation(format!(
            "cannot fit {} persons into a {}x{} scene",
            cfg.min_persons, cfg.height, cfg.width
        ))
    })?;
    let count = placements.len();
    let (h, w) = (cfg.height, cfg.width);

    let mut ranks: Vec<usize> = (0..count).collect();
    ranks.shuffle(&mut rng);
    let luminance: Vec<f64> = ranks
        .iter()
        .map(|&r| 0.3 + 0.4 * r as f64 / (count - 1).max(1) as f64)
        .collect();

    let bg_level = rng.random_range(0.25..0.75);
    let bg_tilt = rng.random_range(-0.05..0.05);
    let noise = Normal::new(0.0, PIXEL_NOISE).expect("valid sigma");
    let mut image = Tensor::zeros(&[h, w, 3]);
    for y in 0..h {
        for x in 0..w {
            let k = y * w + x;
            let o = owner.data()[k] as usize;
            let l = if o == 0 {
                bg_level + bg_tilt * (x as f64 / w as f64 - 0.5)
            } else {
                luminance[o - 1]
            };
            let rgb = to_rgb(l, part_chroma(labels.data()[k]));
            for c in 0..3 {
                let v = (rgb[c] + noise.sample(&mut rng)).clamp(0.0, 1.0);
                image.data_mut()[k * 3 + c] = (v * 255.0).round() / 255.0;
            }
        }
    }

    let masks = (1..=count)
        .map(|i| owner.map(|o| o as usize == i))
        .collect();
    LabeledScene::new(image, masks, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneConfig {
        SceneConfig {
            min_persons: 2,
            max_persons: 3,
            mean_persons: 2.5,
            seed,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn contract_holds_for_small_config() {
        let s = generate_scene(&small(0)).unwrap();
        assert!((2..=3).contains(&s.person_count()));
        assert_eq!(s.image.shape(), &[64, 64, 3]);
        // new() re-validates disjointness and label consistency
        LabeledScene::new(s.image.clone(), s.person_masks.clone(), s.part_labels.clone()).unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_scene(&small(7)).unwrap(), generate_scene(&small(7)).unwrap());
        assert_ne!(generate_scene(&small(7)).unwrap(), generate_scene(&small(8)).unwrap());
    }

    #[test]
    fn image_values_are_byte_quantized() {
        let s = generate_scene(&small(3)).unwrap();
        for &v in s.image.data() {
            let q = (v * 255.0).round() / 255.0;
            assert_eq!(q.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn overcrowded_config_fails() {
        let cfg = SceneConfig {
            height: 32,
            width: 32,
            min_persons: 16,
            max_persons: 16,
            mean_persons: 16.0,
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(&cfg), Err(Error::Generation(_))));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SceneConfig::default();
        cfg.min_persons = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = SceneConfig::default();
        cfg.height = 16;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn palette_chromas_are_distinct() {
        for a in 1..=18u8 {
            for b in 1..a {
                let (ca, cb) = (part_chroma(a), part_chroma(b));
                let d = ((ca.0 - cb.0).powi(2) + (ca.1 - cb.1).powi(2)).sqrt();
                assert!(d > 0.05, "categories {a} and {b} too close: {d}");
            }
        }
    }
}
