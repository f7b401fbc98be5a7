//! Brute-force oracles and random problem generators shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use mhparse::crf::{energy, CrfProblem};
use mhparse::crf::CrfConfig;
use mhparse::instance::InstanceParsing;
use mhparse::numcore::Tensor;
use mhparse::scene::{generate_scene, Grid, LabeledScene, SceneConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type ChaChaRng = ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scene(seed: u64) -> LabeledScene {
    generate_scene(&SceneConfig { seed, ..SceneConfig::default() }).unwrap()
}

// ---------------------------------------------------------------- metrics

/// Builds a valid instance parsing from raw owners, renumbering the owners
/// that survive in order of first appearance.
pub fn instance_from_owners(h: usize, w: usize, owners: &[u16], cats: &[u8], conf: &mut dyn FnMut() -> f64) -> InstanceParsing {
    let mut remap = std::collections::BTreeMap::new();
    let mut ids = vec![0u16; owners.len()];
    let mut out_cats = vec![0u8; owners.len()];
    for k in 0..owners.len() {
        if owners[k] > 0 && cats[k] > 0 {
            let next = remap.len() as u16 + 1;
            ids[k] = *remap.entry(owners[k]).or_insert(next);
            out_cats[k] = cats[k];
        }
    }
    let confidences = (0..remap.len()).map(|_| conf()).collect();
    InstanceParsing::new(
        Grid::from_vec(h, w, ids).unwrap(),
        Grid::from_vec(h, w, out_cats).unwrap(),
        confidences,
    )
    .unwrap()
}

/// One random image pair: up to 4 ground-truth persons over up to 5
/// categories and a perturbed prediction with confidences on a coarse grid
/// so that ties occur.
pub fn random_pair(r: &mut ChaCha8Rng) -> (InstanceParsing, InstanceParsing) {
    let (h, w) = (r.random_range(3..=6), r.random_range(3..=6));
    let n = h * w;
    let persons = r.random_range(1..=4u16);
    let cats_used = r.random_range(1..=5u8);
    let gt_owner: Vec<u16> = (0..n).map(|_| r.random_range(0..=persons)).collect();
    let gt_cat: Vec<u8> = gt_owner
        .iter()
        .map(|&o| if o > 0 { r.random_range(1..=cats_used) } else { 0 })
        .collect();
    let noise = r.random_range(0.0..0.6);
    let extra = r.random_range(0..=1u16);
    let mut pred_owner = gt_owner.clone();
    let mut pred_cat = gt_cat.clone();
    for k in 0..n {
        if r.random::<f64>() < noise {
            pred_owner[k] = r.random_range(0..=persons + extra);
            pred_cat[k] = if pred_owner[k] > 0 { r.random_range(1..=cats_used) } else { 0 };
        }
    }
    // Occasionally shuffle predicted identities so matching is non-trivial.
    if r.random::<bool>() {
        let mut perm: Vec<u16> = (1..=persons + extra).collect();
        perm.shuffle(r);
        for o in pred_owner.iter_mut().filter(|o| **o > 0) {
            *o = perm[*o as usize - 1];
        }
    }
    let mut unit = || 1.0;
    let gt = instance_from_owners(h, w, &gt_owner, &gt_cat, &mut unit);
    let levels = [0.25, 0.5, 0.75, 1.0];
    let mut conf = || levels[r.random_range(0..4)];
    let pred = instance_from_owners(h, w, &pred_owner, &pred_cat, &mut conf);
    (pred, gt)
}

/// Per-category IOU recounted pixel by pixel; `None` if both lack `c`.
pub fn oracle_category_iou(pred: &InstanceParsing, p: u16, gt: &InstanceParsing, g: u16, c: u8) -> Option<f64> {
    let (mut a, mut b, mut i) = (0u32, 0u32, 0u32);
    for k in 0..pred.instance_ids.len() {
        let in_p = pred.instance_ids.data()[k] == p && pred.categories.data()[k] == c;
        let in_g = gt.instance_ids.data()[k] == g && gt.categories.data()[k] == c;
        a += in_p as u32;
        b += in_g as u32;
        i += (in_p && in_g) as u32;
    }
    (a + b > 0).then(|| i as f64 / (a + b - i) as f64)
}

pub fn oracle_overlap(pred: &InstanceParsing, p: u16, gt: &InstanceParsing, g: u16) -> f64 {
    let v: Vec<f64> = (1..19u8).filter_map(|c| oracle_category_iou(pred, p, gt, g, c)).collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Best injective assignment of one image's predictions (given in rank
/// order) to its ground truths, found by trying every assignment. Only
/// pairs with overlap at least `threshold` may be assigned; assignments are
/// compared lexicographically in rank order by (assigned, overlap, lower
/// ground-truth index).
pub fn oracle_assignment(ov: &[Vec<f64>], preds: &[usize], gts: usize, threshold: f64) -> Vec<Option<usize>> {
    fn rec(
        ov: &[Vec<f64>],
        preds: &[usize],
        i: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        best: &mut Option<Vec<Option<usize>>>,
        threshold: f64,
    ) {
        if i == preds.len() {
            let better = match best {
                None => true,
                Some(b) => key(ov, preds, cur) > key(ov, preds, b),
            };
            if better {
                *best = Some(cur.clone());
            }
            return;
        }
        cur.push(None);
        rec(ov, preds, i + 1, used, cur, best, threshold);
        cur.pop();
        for g in 0..used.len() {
            if !used[g] && ov[preds[i]][g] >= threshold {
                used[g] = true;
                cur.push(Some(g));
                rec(ov, preds, i + 1, used, cur, best, threshold);
                cur.pop();
                used[g] = false;
            }
        }
    }
    fn key(ov: &[Vec<f64>], preds: &[usize], a: &[Option<usize>]) -> Vec<(u8, OrdF, i64)> {
        a.iter()
            .zip(preds)
            .map(|(g, &p)| match g {
                Some(g) => (1, OrdF(ov[p][*g]), -(*g as i64)),
                None => (0, OrdF(0.0), 0),
            })
            .collect()
    }
    let mut best = None;
    rec(ov, preds, 0, &mut vec![false; gts], &mut Vec::new(), &mut best, threshold);
    best.unwrap()
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
pub struct OrdF(pub f64);

/// All rankings of `(image, prediction)` consistent with descending
/// confidence, with ties in every possible order. The first is the
/// canonical (image, index) order.
pub fn tie_orderings(preds: &[InstanceParsing]) -> Vec<Vec<(usize, usize)>> {
    let mut items: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, &c) in p.confidences.iter().enumerate() {
            items.push((c, i, j));
        }
    }
    let levels: BTreeSet<OrdKey> = items.iter().map(|t| OrdKey(t.0)).collect();
    let mut groups: Vec<Vec<(usize, usize)>> = levels
        .iter()
        .rev()
        .map(|l| items.iter().filter(|t| t.0 == l.0).map(|t| (t.1, t.2)).collect())
        .collect();
    let mut out = vec![Vec::new()];
    for g in groups.iter_mut() {
        let perms = permutations(g);
        out = out
            .into_iter()
            .flat_map(|prefix| {
                perms.iter().map(move |p| {
                    let mut v = prefix.clone();
                    v.extend(p.iter().copied());
                    v
                })
            })
            .collect();
    }
    out
}

#[derive(PartialEq)]
struct OrdKey(f64);
impl Eq for OrdKey {}
impl PartialOrd for OrdKey {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for OrdKey {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

fn permutations<T: Clone>(v: &[T]) -> Vec<Vec<T>> {
    if v.len() <= 1 {
        return vec![v.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..v.len() {
        let mut rest = v.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x.clone());
            out.push(p);
        }
    }
    out
}

/// Oracle matching for a whole dataset under one ranking: per image, the
/// ground truth assigned to each prediction.
pub fn oracle_matching(
    preds: &[InstanceParsing],
    gts: &[InstanceParsing],
    order: &[(usize, usize)],
    threshold: f64,
) -> Vec<Vec<Option<usize>>> {
    (0..preds.len())
        .map(|img| {
            let ov: Vec<Vec<f64>> = (1..=preds[img].instance_count() as u16)
                .map(|p| {
                    (1..=gts[img].instance_count() as u16)
                        .map(|g| oracle_overlap(&preds[img], p, &gts[img], g))
                        .collect()
                })
                .collect();
            let ranked: Vec<usize> = order.iter().filter(|o| o.0 == img).map(|o| o.1).collect();
            let a = oracle_assignment(&ov, &ranked, gts[img].instance_count(), threshold);
            let mut per_pred = vec![None; preds[img].instance_count()];
            for (slot, &p) in a.iter().zip(&ranked) {
                per_pred[p] = *slot;
            }
            per_pred
        })
        .collect()
}

/// AP as the sum over true positives of `1/positives` times the best
/// precision at that rank or later.
pub fn oracle_ap(preds: &[InstanceParsing], gts: &[InstanceParsing], order: &[(usize, usize)], threshold: f64) -> f64 {
    let positives: usize = gts.iter().map(|g| g.instance_count()).sum();
    if positives == 0 {
        return if order.is_empty() { 1.0 } else { 0.0 };
    }
    let m = oracle_matching(preds, gts, order, threshold);
    let hits: Vec<bool> = order.iter().map(|&(i, p)| m[i][p].is_some()).collect();
    let precision: Vec<f64> = (0..hits.len())
        .map(|r| hits[..=r].iter().filter(|&&h| h).count() as f64 / (r + 1) as f64)
        .collect();
    (0..hits.len())
        .filter(|&r| hits[r])
        .map(|r| precision[r..].iter().cloned().fold(0.0, f64::max) / positives as f64)
        .sum()
}

pub fn oracle_pcp(preds: &[InstanceParsing], gts: &[InstanceParsing], order: &[(usize, usize)], threshold: f64) -> f64 {
    let m = oracle_matching(preds, gts, order, threshold);
    let mut scores = Vec::new();
    for img in 0..gts.len() {
        for g in 0..gts[img].instance_count() {
            let matched = m[img].iter().position(|a| *a == Some(g));
            let cats: Vec<u8> = (1..19u8)
                .filter(|&c| {
                    (0..gts[img].instance_ids.len()).any(|k| {
                        gts[img].instance_ids.data()[k] == g as u16 + 1 && gts[img].categories.data()[k] == c
                    })
                })
                .collect();
            let s = match matched {
                Some(p) => {
                    let good = cats
                        .iter()
                        .filter(|&&c| {
                            oracle_category_iou(&preds[img], p as u16 + 1, &gts[img], g as u16 + 1, c).unwrap() > threshold
                        })
                        .count();
                    good as f64 / cats.len() as f64
                }
                None => 0.0,
            };
            scores.push(s);
        }
    }
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Pairwise box IOU recounted pixel by pixel over the tight boxes.
pub fn oracle_average_iou(masks: &[Grid<bool>]) -> f64 {
    let boxes: Vec<(usize, usize, usize, usize)> = masks
        .iter()
        .filter_map(|m| {
            let mut b: Option<(usize, usize, usize, usize)> = None;
            for y in 0..m.height() {
                for x in 0..m.width() {
                    if m.get(y, x) {
                        b = Some(match b {
                            None => (y, x, y, x),
                            Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
                        });
                    }
                }
            }
            b
        })
        .collect();
    let inside = |b: (usize, usize, usize, usize), y: usize, x: usize| y >= b.0 && y <= b.2 && x >= b.1 && x <= b.3;
    let (h, w) = (masks[0].height(), masks[0].width());
    let mut vals = Vec::new();
    for i in 0..boxes.len() {
        for j in (i + 1)..boxes.len() {
            let (mut inter, mut union) = (0usize, 0usize);
            for y in 0..h {
                for x in 0..w {
                    let (a, b) = (inside(boxes[i], y, x), inside(boxes[j], y, x));
                    inter += (a && b) as usize;
                    union += (a || b) as usize;
                }
            }
            vals.push(inter as f64 / union as f64);
        }
    }
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

// -------------------------------------------------------------------- crf

/// Random CRF problem with 2 labels on up to 16 pixels or 3 labels on up to
/// 10 pixels.
pub fn random_crf_problem(r: &mut ChaCha8Rng) -> CrfProblem {
    let labels = r.random_range(2..=3usize);
    let (h, w) = if labels == 2 {
        [(4, 4), (3, 5), (2, 8), (3, 4)][r.random_range(0..4)]
    } else {
        [(2, 5), (3, 3), (2, 4), (3, 2)][r.random_range(0..4)]
    };
    let n = h * w;
    let q = Grid::from_vec(h, w, (0..n).map(|_| r.random::<f64>()).collect()).unwrap();
    let owner: Vec<usize> = (0..n).map(|_| r.random_range(0..labels)).collect();
    let masks = (1..labels)
        .map(|p| Grid::from_vec(h, w, owner.iter().map(|&o| o == p).collect()).unwrap())
        .collect();
    let f = Tensor::new(vec![h, w, 2], (0..n * 2).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let img = Tensor::new(vec![h, w, 3], (0..n * 3).map(|_| r.random::<f64>()).collect()).unwrap();
    CrfProblem::new(q, masks, f, img).unwrap()
}

/// Exact marginals (`n×L`, row-major) and MAP energy by enumerating every
/// labelling.
pub fn exact_crf(p: &CrfProblem, cfg: &CrfConfig) -> (Vec<f64>, f64) {
    let (n, l) = (p.pixels(), p.labels());
    let total = l.pow(n as u32);
    let mut lab = vec![0u16; n];
    let energies: Vec<f64> = (0..total)
        .map(|mut c| {
            for v in lab.iter_mut() {
                *v = (c % l) as u16;
                c /= l;
            }
            energy(p, cfg, &lab)
        })
        .collect();
    let emin = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut marg = vec![0.0; n * l];
    let mut z = 0.0;
    for (code, &e) in energies.iter().enumerate() {
        let wgt = (emin - e).exp();
        z += wgt;
        let mut c = code;
        for k in 0..n {
            marg[k * l + c % l] += wgt;
            c /= l;
        }
    }
    marg.iter_mut().for_each(|v| *v /= z);
    (marg, emin)
}
