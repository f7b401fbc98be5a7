//! Human-centric evaluation: part-level overlap between person instances,
//! AP^p at an overlap threshold, its average over thresholds 0.1 to 0.9,
//! the percentage of correctly parsed parts, and the closeness statistic of
//! a dataset (mean pairwise bounding-box IOU of persons per image).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::InstanceParsing;
use crate::scene::{Grid, LabeledScene, NUM_CLASSES};

/// The nine thresholds averaged by AP^p_vol.
pub fn vol_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Pixel statistics of every (prediction, ground truth) instance pair of
/// one image, per part category.
#[derive(Debug, Clone)]
pub struct OverlapTable {
    pred_area: Vec<[u32; NUM_CLASSES]>,
    gt_area: Vec<[u32; NUM_CLASSES]>,
    /// Intersection counts keyed by (prediction, ground truth, category).
    inter: BTreeMap<(usize, usize, u8), u32>,
}

impl OverlapTable {
    pub fn new(pred: &InstanceParsing, gt: &InstanceParsing) -> Result<Self> {
        if !pred.instance_ids.same_dims(&gt.instance_ids) {
            return Err(Error::arg("prediction and ground truth differ in size"));
        }
        let mut pred_area = vec![[0u32; NUM_CLASSES]; pred.instance_count()];
        let mut gt_area = vec![[0u32; NUM_CLASSES]; gt.instance_count()];
        let mut inter = BTreeMap::new();
        let px = pred.instance_ids.data().iter().zip(pred.categories.data());
        let gx = gt.instance_ids.data().iter().zip(gt.categories.data());
        for ((&pi, &pc), (&gi, &gc)) in px.zip(gx) {
            if pi > 0 {
                pred_area[pi as usize - 1][pc as usize] += 1;
            }
            if gi > 0 {
                gt_area[gi as usize - 1][gc as usize] += 1;
            }
            if pi > 0 && gi > 0 && pc == gc {
                *inter.entry((pi as usize - 1, gi as usize - 1, pc)).or_default() += 1;
            }
        }
        Ok(Self {
            pred_area,
            gt_area,
            inter,
        })
    }

    pub fn predictions(&self) -> usize {
        self.pred_area.len()
    }

    pub fn ground_truths(&self) -> usize {
        self.gt_area.len()
    }

    /// IOU of category `c` between prediction `p` and ground truth `g`
    /// (0-based instance indices); `None` if both lack the category.
    pub fn category_iou(&self, p: usize, g: usize, c: u8) -> Option<f64> {
        let a = self.pred_area[p][c as usize];
        let b = self.gt_area[g][c as usize];
        if a == 0 && b == 0 {
            return None;
        }
        let i = self.inter.get(&(p, g, c)).copied().unwrap_or(0);
        Some(i as f64 / (a + b - i) as f64)
    }

    /// Mean per-category IOU over categories present in either instance.
    pub fn overlap(&self, p: usize, g: usize) -> f64 {
        let ious: Vec<f64> = (1..NUM_CLASSES as u8).filter_map(|c| self.category_iou(p, g, c)).collect();
        if ious.is_empty() {
            0.0
        } else {
            ious.iter().sum::<f64>() / ious.len() as f64
        }
    }

    /// Categories present in ground-truth person `g`.
    pub fn gt_categories(&self, g: usize) -> Vec<u8> {
        (1..NUM_CLASSES as u8).filter(|&c| self.gt_area[g][c as usize] > 0).collect()
    }
}

/// Part-level overlap between instance `pred_id` of `pred` and `gt_id` of
/// `gt` (1-based ids).
pub fn part_overlap(pred: &InstanceParsing, pred_id: u16, gt: &InstanceParsing, gt_id: u16) -> Result<f64> {
    if pred_id == 0 || gt_id == 0 || pred_id as usize > pred.instance_count() || gt_id as usize > gt.instance_count() {
        return Err(Error::arg("instance ids out of range"));
    }
    Ok(OverlapTable::new(pred, gt)?.overlap(pred_id as usize - 1, gt_id as usize - 1))
}

/// Matching outcome for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Per prediction: matched ground-truth index and the overlap with the
    /// best unmatched ground truth at its turn.
    pub predictions: Vec<(Option<usize>, f64)>,
    pub gt_matched: Vec<bool>,
}

/// Predictions of the whole dataset in ranking order: descending
/// confidence, ties by image then instance index.
fn ranking(preds: &[InstanceParsing]) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = preds
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.instance_count()).map(move |j| (i, j)))
        .collect();
    order.sort_by(|a, b| preds[b.0].confidences[b.1].total_cmp(&preds[a.0].confidences[a.1]));
    order
}

/// Greedy matching in ranking order: each prediction takes the unmatched
/// ground truth of its image with the highest overlap (lowest index on
/// ties) and is a true positive iff that overlap reaches `threshold`.
pub fn match_predictions(tables: &[OverlapTable], order: &[(usize, usize)], threshold: f64) -> Vec<MatchResult> {
    let mut out: Vec<MatchResult> = tables
        .iter()
        .map(|t| MatchResult {
            predictions: vec![(None, 0.0); t.predictions()],
            gt_matched: vec![false; t.ground_truths()],
        })
        .collect();
    for &(img, p) in order {
        let t = &tables[img];
        let m = &mut out[img];
        let mut best: Option<(usize, f64)> = None;
        for g in 0..t.ground_truths() {
            if m.gt_matched[g] {
                continue;
            }
            let o = t.overlap(p, g);
            if best.is_none_or(|(_, bo)| o > bo) {
                best = Some((g, o));
            }
        }
        if let Some((g, o)) = best {
            m.predictions[p] = (None, o);
            if o >= threshold {
                m.predictions[p].0 = Some(g);
                m.gt_matched[g] = true;
            }
        }
    }
    out
}

/// Area under the precision envelope (all recall points).
pub fn average_precision(tp_in_rank_order: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return if tp_in_rank_order.is_empty() { 1.0 } else { 0.0 };
    }
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in tp_in_rank_order {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / positives as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len())
        .filter(|&i| recall[i] != recall[i - 1])
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum()
}

/// Precomputed overlap tables for a dataset of (prediction, ground truth)
/// pairs.
#[derive(Debug, Clone)]
pub struct Evaluation<'a> {
    preds: &'a [InstanceParsing],
    tables: Vec<OverlapTable>,
    order: Vec<(usize, usize)>,
    positives: usize,
}

impl<'a> Evaluation<'a> {
    pub fn new(preds: &'a [InstanceParsing], gts: &[InstanceParsing]) -> Result<Self> {
        if preds.len() != gts.len() {
            return Err(Error::arg(format!("{} predictions for {} images", preds.len(), gts.len())));
        }
        let tables = preds
            .iter()
            .zip(gts)
            .map(|(p, g)| OverlapTable::new(p, g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            preds,
            order: ranking(preds),
            positives: gts.iter().map(|g| g.instance_count()).sum(),
            tables,
        })
    }

    pub fn matches(&self, threshold: f64) -> Vec<MatchResult> {
        match_predictions(&self.tables, &self.order, threshold)
    }

    pub fn ap_p(&self, threshold: f64) -> f64 {
        let m = self.matches(threshold);
        let hits: Vec<bool> = self.order.iter().map(|&(i, p)| m[i].predictions[p].0.is_some()).collect();
        average_precision(&hits, self.positives)
    }

    pub fn ap_p_vol(&self) -> f64 {
        let t = vol_thresholds();
        t.iter().map(|&th| self.ap_p(th)).sum::<f64>() / t.len() as f64
    }

    /// Per ground-truth person: fraction of its categories whose IOU with
    /// the matched prediction exceeds `threshold`; 0 when unmatched.
    pub fn pcp_scores(&self, threshold: f64) -> Vec<Vec<f64>> {
        let m = self.matches(threshold);
        self.tables
            .iter()
            .zip(&m)
            .map(|(t, mr)| {
                let mut by_gt = vec![None; t.ground_truths()];
                for (p, &(g, _)) in mr.predictions.iter().enumerate() {
                    if let Some(g) = g {
                        by_gt[g] = Some(p);
                    }
                }
                (0..t.ground_truths())
                    .map(|g| {
                        let cats = t.gt_categories(g);
                        match by_gt[g] {
                            Some(p) if !cats.is_empty() => {
                                let good = cats
                                    .iter()
                                    .filter(|&&c| t.category_iou(p, g, c).unwrap_or(0.0) > threshold)
                                    .count();
                                good as f64 / cats.len() as f64
                            }
                            _ => 0.0,
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn pcp(&self, threshold: f64) -> f64 {
        let scores: Vec<f64> = self.pcp_scores(threshold).into_iter().flatten().collect();
        if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        }
    }

    pub fn predictions(&self) -> &[InstanceParsing] {
        self.preds
    }
}

pub fn ap_p(preds: &[InstanceParsing], gts: &[InstanceParsing], threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    Ok(Evaluation::new(preds, gts)?.ap_p(threshold))
}

pub fn ap_p_vol(preds: &[InstanceParsing], gts: &[InstanceParsing]) -> Result<f64> {
    Ok(Evaluation::new(preds, gts)?.ap_p_vol())
}

pub fn pcp(preds: &[InstanceParsing], gts: &[InstanceParsing], threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    Ok(Evaluation::new(preds, gts)?.pcp(threshold))
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::arg(format!("threshold {t} outside (0, 1)")));
    }
    Ok(())
}

/// IOU of two boxes `(y0, x0, y1, x1)` with exclusive ends.
pub fn box_iou(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> f64 {
    let area = |r: (usize, usize, usize, usize)| ((r.2 - r.0) * (r.3 - r.1)) as f64;
    let ih = a.2.min(b.2).saturating_sub(a.0.max(b.0));
    let iw = a.3.min(b.3).saturating_sub(a.1.max(b.1));
    let inter = (ih * iw) as f64;
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Mean bounding-box IOU over all unordered person pairs of one image;
/// 0 for images with fewer than two persons.
pub fn average_iou(masks: &[Grid<bool>]) -> f64 {
    let boxes: Vec<_> = masks.iter().filter_map(|m| m.bbox()).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..boxes.len() {
        for j in 0..i {
            total += box_iou(boxes[i], boxes[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Closeness statistic: the mean over images of [`average_iou`].
pub fn mean_average_iou(scenes: &[LabeledScene]) -> f64 {
    if scenes.is_empty() {
        return 0.0;
    }
    scenes.iter().map(|s| average_iou(&s.person_masks)).sum::<f64>() / scenes.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub name: String,
    pub gt_persons: usize,
    pub predicted_persons: usize,
    pub ap_p_50: f64,
    pub pcp_50: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `(threshold, AP^p)` pairs.
    pub ap_p: Vec<(f64, f64)>,
    pub ap_p_vol: f64,
    pub pcp_threshold: f64,
    pub pcp: f64,
    /// Mean pairwise person-box IOU of the ground truth.
    pub closeness: f64,
    /// Scenes whose predicted person count differs from the truth.
    pub count_mismatches: usize,
    pub scenes: Vec<SceneMetrics>,
}

impl MetricReport {
    /// AP^p at `threshold`, if it was evaluated.
    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        self.ap_p
            .iter()
            .find(|(t, _)| (t - threshold).abs() < 1e-9)
            .map(|&(_, v)| v)
    }

    /// Plain-text summary in percent.
    pub fn table(&self) -> String {
        let ap50 = self.ap_at(0.5).map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
        format!(
            "{:<10} {:<10} {:<10}\n{:<10} {:<10.2} {:<10.2}\n",
            "AP^p_0.5",
            "AP^p_vol",
            format!("PCP_{}", self.pcp_threshold),
            ap50,
            100.0 * self.ap_p_vol,
            100.0 * self.pcp
        )
    }
}

/// Full report over a dataset. `thresholds` are the AP^p thresholds to
/// list; AP^p_vol always uses the nine standard ones and PCP uses 0.5.
pub fn evaluate(
    names: &[String],
    preds: &[InstanceParsing],
    gts: &[InstanceParsing],
    gt_masks: &[Vec<Grid<bool>>],
    thresholds: &[f64],
) -> Result<MetricReport> {
    if names.len() != preds.len() || gt_masks.len() != preds.len() {
        return Err(Error::arg("names, predictions and masks differ in length"));
    }
    for &t in thresholds {
        check_threshold(t)?;
    }
    let ev = Evaluation::new(preds, gts)?;
    let pcp_threshold = 0.5;
    let mut scenes = Vec::with_capacity(preds.len());
    for i in 0..preds.len() {
        let one = Evaluation::new(&preds[i..i + 1], &gts[i..i + 1])?;
        scenes.push(SceneMetrics {
            name: names[i].clone(),
            gt_persons: gts[i].instance_count(),
            predicted_persons: preds[i].instance_count(),
            ap_p_50: one.ap_p(0.5),
            pcp_50: one.pcp(pcp_threshold),
        });
    }
    let closeness = if gt_masks.is_empty() {
        0.0
    } else {
        gt_masks.iter().map(|m| average_iou(m)).sum::<f64>() / gt_masks.len() as f64
    };
    Ok(MetricReport {
        ap_p: thresholds.iter().map(|&t| (t, ev.ap_p(t))).collect(),
        ap_p_vol: ev.ap_p_vol(),
        pcp_threshold,
        pcp: ev.pcp(pcp_threshold),
        closeness,
        count_mismatches: scenes.iter().filter(|s| s.gt_persons != s.predicted_persons).count(),
        scenes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parsing(ids: &[u16], cats: &[u8], w: usize) -> InstanceParsing {
        let h = ids.len() / w;
        let p = ids.iter().copied().max().unwrap_or(0) as usize;
        InstanceParsing::new(
            Grid::from_vec(h, w, ids.to_vec()).unwrap(),
            Grid::from_vec(h, w, cats.to_vec()).unwrap(),
            vec![1.0; p],
        )
        .unwrap()
    }

    #[test]
    fn overlap_of_identical_and_disjoint() {
        let a = parsing(&[1, 1, 2, 2], &[3, 4, 3, 4], 4);
        assert_eq!(part_overlap(&a, 1, &a, 1).unwrap(), 1.0);
        assert_eq!(part_overlap(&a, 1, &a, 2).unwrap(), 0.0);
    }

    #[test]
    fn overlap_is_mean_of_category_ious() {
        // category 1: pred 5 px, gt 4 px, inter 4 → 0.8
        // category 2: pred 2 px, gt 5 px, inter 2 → 0.4
        let pred = parsing(&[1, 1, 1, 1, 1, 1, 1, 0, 0, 0], &[1, 1, 1, 1, 1, 2, 2, 0, 0, 0], 10);
        let gt = parsing(&[1, 1, 1, 1, 0, 1, 1, 1, 1, 1], &[1, 1, 1, 1, 0, 2, 2, 2, 2, 2], 10);
        assert!((part_overlap(&pred, 1, &gt, 1).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ap_edge_cases() {
        let gt = parsing(&[1, 1, 2, 2], &[3, 4, 3, 4], 4);
        let none = InstanceParsing::empty(1, 4);
        assert_eq!(ap_p(&[gt.clone()], &[gt.clone()], 0.9).unwrap(), 1.0);
        assert_eq!(ap_p(&[none.clone()], &[gt.clone()], 0.5).unwrap(), 0.0);
        assert_eq!(ap_p(&[none.clone()], &[none.clone()], 0.5).unwrap(), 1.0);
        assert_eq!(ap_p(&[gt], &[none], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn precision_envelope() {
        // TP, FP, TP with 2 positives: recall 0.5 at p=1, 1.0 at p=2/3
        let ap = average_precision(&[true, false, true], 2);
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn pcp_counts_categories_above_threshold() {
        // one person, three categories with IOUs 0.8, 0.6, 0.4
        // category 1: gt 5, pred 4 inside → 0.8; category 2: gt 5, pred 3 → 0.6;
        // category 3: gt 5, pred 2 → 0.4
        let gt_c: Vec<u8> = [1u8; 5].iter().chain(&[2u8; 5]).chain(&[3u8; 5]).copied().collect();
        let pred_c: Vec<u8> = [1u8, 1, 1, 1, 0, 2, 2, 2, 0, 0, 3, 3, 0, 0, 0].to_vec();
        let gt = parsing(&[1; 15], &gt_c, 15);
        let pred_ids: Vec<u16> = pred_c.iter().map(|&c| (c > 0) as u16).collect();
        let pred = parsing(&pred_ids, &pred_c, 15);
        let p = pcp(&[pred], &[gt], 0.5).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn box_iou_values() {
        assert_eq!(box_iou((0, 0, 2, 2), (0, 0, 2, 2)), 1.0);
        assert_eq!(box_iou((0, 0, 2, 2), (2, 2, 4, 4)), 0.0);
        assert!((box_iou((0, 0, 2, 2), (0, 1, 2, 3)) - 1.0 / 3.0).abs() < 1e-12);
    }
}
