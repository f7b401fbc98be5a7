//! Browser demo: generate a scene, recover its persons from superpixels and
//! the ground-truth affinity graph, and score a corrupted copy of the result.
//!
//! [`DemoCore`] holds the logic and runs natively; [`Demo`] is its
//! JavaScript face.

use mhparse::affinity::{accordance_map, gt_affinity, superpixel_majority};
use mhparse::instance::{adjusted_rand_index, cluster_pixels, InstanceParsing, PixelParsing};
use mhparse::metrics::{vol_thresholds, Evaluation};
use mhparse::palette;
use mhparse::scene::{generate_scene, make_superpixels, Grid, LabeledScene, SceneConfig, SuperpixelMap};
use mhparse::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Outcome of instance recovery.
#[derive(Debug, Clone, Serialize)]
pub struct Recovery {
    pub superpixels: usize,
    pub persons: usize,
    pub recovered: usize,
    /// Adjusted Rand index over foreground pixels.
    pub ari: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Scores {
    /// `(threshold, AP^p)` at the nine standard thresholds.
    pub ap: Vec<(f64, f64)>,
    pub ap_vol: f64,
    pub pcp_50: f64,
    pub persons: usize,
    pub predicted: usize,
}

pub struct DemoCore {
    pub scene: LabeledScene,
    superpixels: Option<SuperpixelMap>,
    recovered: Option<InstanceParsing>,
}

/// Renumbers instance ids by first appearance, dropping empty ones.
fn renumber(ids: &Grid<u16>, categories: &Grid<u8>) -> Result<InstanceParsing> {
    let mut map = std::collections::BTreeMap::new();
    let mut out = ids.clone();
    for v in out.data_mut().iter_mut().filter(|v| **v > 0) {
        let next = map.len() as u16 + 1;
        *v = *map.entry(*v).or_insert(next);
    }
    let n = map.len();
    InstanceParsing::new(out, categories.clone(), vec![1.0; n])
}

impl DemoCore {
    pub fn generate(seed: u64, size: usize, max_persons: usize) -> Result<Self> {
        let cfg = SceneConfig {
            seed,
            height: size,
            width: size,
            max_persons,
            mean_persons: 3f64.min(max_persons as f64),
            ..SceneConfig::default()
        };
        Ok(Self {
            scene: generate_scene(&cfg)?,
            superpixels: None,
            recovered: None,
        })
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.scene.image.len() / 3 * 4);
        for px in self.scene.image.data().chunks(3) {
            out.extend(px.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
            out.push(255);
        }
        out
    }

    pub fn ground_truth_rgba(&self, by_instance: bool) -> Vec<u8> {
        palette::rgba(&InstanceParsing::from_scene(&self.scene), by_instance)
    }

    /// Spectral clustering of the ground-truth affinity graph over
    /// superpixels of roughly `target_size` pixels, with the true count.
    pub fn recover(&mut self, target_size: usize) -> Result<Recovery> {
        let sp = make_superpixels(&self.scene, target_size)?;
        let sigma = superpixel_majority(&accordance_map(&self.scene), &sp)?;
        let graph = gt_affinity(&sigma);
        let pixels = PixelParsing::from_labels(&self.scene.part_labels);
        let persons = self.scene.person_count();
        let pred = cluster_pixels(&graph, &pixels, &sp, persons, 0)?;
        let truth = accordance_map(&self.scene).0;
        let fg: Vec<usize> = (0..truth.len()).filter(|&k| truth.data()[k] > 0).collect();
        let a: Vec<u16> = fg.iter().map(|&k| truth.data()[k]).collect();
        let b: Vec<u16> = fg.iter().map(|&k| pred.instance_ids.data()[k]).collect();
        let r = Recovery {
            superpixels: sp.count,
            persons,
            recovered: pred.instance_count(),
            ari: adjusted_rand_index(&a, &b),
        };
        self.superpixels = Some(sp);
        self.recovered = Some(pred);
        Ok(r)
    }

    /// Recovered instances with superpixel borders darkened; black before
    /// [`DemoCore::recover`] runs.
    pub fn recovered_rgba(&self) -> Vec<u8> {
        let (h, w) = (self.scene.height(), self.scene.width());
        let (Some(pred), Some(sp)) = (&self.recovered, &self.superpixels) else {
            return [0, 0, 0, 255].repeat(h * w);
        };
        let mut out = palette::rgba(pred, true);
        let a = &sp.assignment;
        for y in 0..h {
            for x in 0..w {
                let edge = (x + 1 < w && a.get(y, x) != a.get(y, x + 1)) || (y + 1 < h && a.get(y, x) != a.get(y + 1, x));
                if edge {
                    let k = (y * w + x) * 4;
                    for c in &mut out[k..k + 3] {
                        *c = (*c as u16 * 2 / 5 + 60) as u8;
                    }
                }
            }
        }
        out
    }

    /// Copy of the recovered parsing (or the ground truth if nothing was
    /// recovered yet) with each person pixel handed to a random person with
    /// probability `noise`.
    pub fn corrupted(&self, noise: f64, seed: u64) -> Result<InstanceParsing> {
        let base = self.recovered.clone().unwrap_or_else(|| InstanceParsing::from_scene(&self.scene));
        let p = base.instance_count() as u16;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids = base.instance_ids.clone();
        for v in ids.data_mut().iter_mut().filter(|v| **v > 0) {
            if rng.random::<f64>() < noise {
                *v = rng.random_range(1..=p);
            }
        }
        renumber(&ids, &base.categories)
    }

    pub fn score(&self, pred: &InstanceParsing) -> Result<Scores> {
        let preds = [pred.clone()];
        let gts = [InstanceParsing::from_scene(&self.scene)];
        let ev = Evaluation::new(&preds, &gts)?;
        Ok(Scores {
            ap: vol_thresholds().into_iter().map(|t| (t, ev.ap_p(t))).collect(),
            ap_vol: ev.ap_p_vol(),
            pcp_50: ev.pcp(0.5),
            persons: gts[0].instance_count(),
            predicted: pred.instance_count(),
        })
    }
}

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// The demo state exposed to JavaScript.
#[wasm_bindgen]
pub struct Demo {
    core: DemoCore,
    corrupted: Option<InstanceParsing>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: usize, max_persons: usize) -> std::result::Result<Demo, JsError> {
        Ok(Self {
            core: DemoCore::generate(seed as u64, size, max_persons).map_err(js)?,
            corrupted: None,
        })
    }

    pub fn width(&self) -> usize {
        self.core.scene.width()
    }

    pub fn height(&self) -> usize {
        self.core.scene.height()
    }

    pub fn persons(&self) -> usize {
        self.core.scene.person_count()
    }

    pub fn image(&self) -> Vec<u8> {
        self.core.image_rgba()
    }

    /// Ground truth coloured per part (`false`) or per person (`true`).
    pub fn ground_truth(&self, by_instance: bool) -> Vec<u8> {
        self.core.ground_truth_rgba(by_instance)
    }

    /// Runs recovery and returns its summary as JSON.
    pub fn recover(&mut self, target_size: usize) -> std::result::Result<String, JsError> {
        self.corrupted = None;
        let r = self.core.recover(target_size).map_err(js)?;
        serde_json::to_string(&r).map_err(js)
    }

    pub fn recovered(&self) -> Vec<u8> {
        self.core.recovered_rgba()
    }

    /// Scores a corrupted copy of the recovered parsing; returns JSON.
    pub fn score(&mut self, noise: f64, seed: u32) -> std::result::Result<String, JsError> {
        let pred = self.core.corrupted(noise.clamp(0.0, 1.0), seed as u64).map_err(js)?;
        let s = self.core.score(&pred).map_err(js)?;
        self.corrupted = Some(pred);
        serde_json::to_string(&s).map_err(js)
    }

    /// The last scored prediction coloured per person.
    pub fn scored(&self) -> Vec<u8> {
        match &self.corrupted {
            Some(p) => palette::rgba(p, true),
            None => self.core.recovered_rgba(),
        }
    }
}
