//! Global accordance maps and pairwise superpixel affinity graphs.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numcore::{RowMap, Tape, Tensor, Var};
use crate::scene::{Grid, LabeledScene, SuperpixelMap};

/// Default bandwidth of the Gaussian affinity kernel.
pub const DEFAULT_THETA: f64 = 1.0;

/// Per-pixel person id, 0 for background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccordanceMap(pub Grid<u16>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AffinityKind {
    GroundTruth,
    Predicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    /// `N×N`, symmetric, entries in `[0, 1]`.
    pub affinity: Tensor,
    pub foreground: Vec<bool>,
    pub kind: AffinityKind,
}

impl AffinityGraph {
    pub fn node_count(&self) -> usize {
        self.foreground.len()
    }

    /// Binary mask that keeps only connections between two foreground nodes.
    pub fn foreground_mask(&self) -> Tensor {
        foreground_mask(&self.foreground)
    }
}

pub fn foreground_mask(foreground: &[bool]) -> Tensor {
    let n = foreground.len();
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if foreground[i] && foreground[j] {
                m.data_mut()[i * n + j] = 1.0;
            }
        }
    }
    m
}

pub fn accordance_map(scene: &LabeledScene) -> AccordanceMap {
    let mut m = Grid::filled(scene.height(), scene.width(), 0u16);
    for (i, mask) in scene.person_masks.iter().enumerate() {
        for (k, &on) in mask.data().iter().enumerate() {
            if on {
                m.data_mut()[k] = i as u16 + 1;
            }
        }
    }
    AccordanceMap(m)
}

/// Most frequent value; ties go to the smallest non-zero value, and 0 only
/// wins when it is the strict majority.
pub fn majority_vote<T>(values: impl IntoIterator<Item = T>) -> T
where
    T: Copy + Ord + Default,
{
    let mut counts = std::collections::BTreeMap::<T, usize>::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let zero = T::default();
    let mut best: Option<(T, usize)> = None;
    for (&v, &c) in &counts {
        best = match best {
            None => Some((v, c)),
            Some((bv, bc)) if c > bc || (c == bc && bv == zero && v != zero) => Some((v, c)),
            keep => keep,
        };
    }
    best.map_or(zero, |(v, _)| v)
}

/// Majority person id of every superpixel. Background wins only as a
/// strict majority; a tie between persons goes to the one whose first pixel
/// comes first in raster order, so the result does not depend on how person
/// ids were assigned.
pub fn superpixel_majority(m: &AccordanceMap, sp: &SuperpixelMap) -> Result<Vec<u16>> {
    if !m.0.same_dims(&sp.assignment) {
        return Err(Error::arg("accordance map and superpixel map differ in size"));
    }
    Ok(sp
        .members()
        .iter()
        .map(|pixels| {
            // id -> (count, first pixel)
            let mut tally = std::collections::BTreeMap::<u16, (usize, usize)>::new();
            for &k in pixels {
                let e = tally.entry(m.0.data()[k]).or_insert((0, k));
                e.0 += 1;
                e.1 = e.1.min(k);
            }
            let background = tally.get(&0).map_or(0, |e| e.0);
            let best = tally
                .iter()
                .filter(|(&id, _)| id != 0)
                .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)));
            match best {
                Some((&id, &(count, _))) if count >= background => id,
                _ => 0,
            }
        })
        .collect())
}

/// Ground-truth affinity: 1 between superpixels of the same person, 0
/// otherwise (including between background superpixels).
pub fn gt_affinity(sigma: &[u16]) -> AffinityGraph {
    let n = sigma.len();
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if sigma[i] > 0 && sigma[i] == sigma[j] {
                a.data_mut()[i * n + j] = 1.0;
            }
        }
    }
    AffinityGraph {
        affinity: a,
        foreground: sigma.iter().map(|&s| s > 0).collect(),
        kind: AffinityKind::GroundTruth,
    }
}

/// Superpixel average pooling from a `fh×fw` feature grid. Each image pixel
/// reads the feature cell it falls into, and a superpixel averages over its
/// pixels, so cells are weighted by how many of the superpixel's pixels they
/// hold.
pub fn pooling_map(sp: &SuperpixelMap, fh: usize, fw: usize) -> Result<RowMap> {
    let (h, w) = (sp.height(), sp.width());
    if fh == 0 || fw == 0 || h % fh != 0 || w % fw != 0 {
        return Err(Error::Resolution(format!(
            "superpixel map {h}x{w} is not a multiple of feature grid {fh}x{fw}"
        )));
    }
    let (sy, sx) = (h / fh, w / fw);
    let mut rows = Vec::with_capacity(sp.count);
    for (n, pixels) in sp.members().iter().enumerate() {
        if pixels.is_empty() {
            return Err(Error::Resolution(format!("superpixel {n} is empty")));
        }
        let mut cells = std::collections::BTreeMap::<usize, usize>::new();
        for &k in pixels {
            let (y, x) = (k / w, k % w);
            *cells.entry((y / sy) * fw + x / sx).or_default() += 1;
        }
        let total = pixels.len() as f64;
        rows.push(cells.into_iter().map(|(c, cnt)| (c, cnt as f64 / total)).collect());
    }
    Ok(RowMap {
        inputs: fh * fw,
        rows,
    })
}

/// Predicted affinity on a tape: pooled features through the Gaussian kernel.
/// `features` is `(fh·fw)×C_F`.
pub fn predicted_affinity_var(tape: &mut Tape, features: Var, pool: Arc<RowMap>, theta: f64) -> Result<Var> {
    let pooled = tape.row_pool(features, pool)?;
    tape.gaussian_kernel(pooled, theta)
}

/// Predicted affinity from an `H''×W''×C_F` feature tensor.
pub fn predicted_affinity(features: &Tensor, sp: &SuperpixelMap, theta: f64) -> Result<AffinityGraph> {
    if features.shape().len() != 3 {
        return Err(Error::arg(format!("features must be H×W×C, got {:?}", features.shape())));
    }
    if theta <= 0.0 {
        return Err(Error::arg("theta must be positive"));
    }
    let (fh, fw, c) = (features.shape()[0], features.shape()[1], features.shape()[2]);
    let pool = Arc::new(pooling_map(sp, fh, fw)?);
    let mut tape = Tape::new();
    let f = tape.constant(features.clone().reshape(vec![fh * fw, c])?);
    let a = predicted_affinity_var(&mut tape, f, pool, theta)?;
    Ok(AffinityGraph {
        affinity: tape.value(a).clone(),
        foreground: vec![true; sp.count],
        kind: AffinityKind::Predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_rules() {
        assert_eq!(majority_vote([1u16, 1, 2]), 1);
        assert_eq!(majority_vote([0u16, 0, 0]), 0);
        assert_eq!(majority_vote([2u16, 1, 1, 2]), 1);
        assert_eq!(majority_vote([0u16, 3, 0, 3]), 3);
        assert_eq!(majority_vote([0u16, 0, 0, 3]), 0);
    }

    #[test]
    fn background_pairs_have_zero_affinity() {
        let g = gt_affinity(&[0, 0, 1, 1, 2]);
        let a = &g.affinity;
        assert_eq!(a.get2(0, 1), 0.0);
        assert_eq!(a.get2(0, 0), 0.0);
        assert_eq!(a.get2(2, 3), 1.0);
        assert_eq!(a.get2(2, 2), 1.0);
        assert_eq!(a.get2(3, 4), 0.0);
        assert_eq!(g.foreground, vec![false, false, true, true, true]);
    }

    #[test]
    fn single_person_is_all_ones() {
        let g = gt_affinity(&[1, 1, 1]);
        assert!(g.affinity.data().iter().all(|&v| v == 1.0));
    }

    fn sp_3x1() -> SuperpixelMap {
        SuperpixelMap::new(Grid::from_vec(1, 3, vec![0, 1, 2]).unwrap()).unwrap()
    }

    #[test]
    fn identical_features_give_unit_affinity() {
        let f = Tensor::full(&[1, 3, 2], 0.7);
        let g = predicted_affinity(&f, &sp_3x1(), 1.0).unwrap();
        assert!(g.affinity.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn kernel_at_two_theta_squared_is_inv_e() {
        let theta = 0.8;
        // squared distance 2θ² between cells 0 and 1
        let d = (2.0f64).sqrt() * theta;
        let f = Tensor::new(vec![1, 3, 1], vec![0.0, d, 10.0]).unwrap();
        let g = predicted_affinity(&f, &sp_3x1(), theta).unwrap();
        assert!((g.affinity.get2(0, 1) - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(g.affinity.get2(0, 1), g.affinity.get2(1, 0));
    }

    #[test]
    fn hand_set_features_match_direct_evaluation() {
        let feats = [[0.1, -0.3], [0.5, 0.2], [-0.4, 0.9]];
        let data: Vec<f64> = feats.iter().flatten().cloned().collect();
        let f = Tensor::new(vec![1, 3, 2], data).unwrap();
        let theta = 0.6;
        let g = predicted_affinity(&f, &sp_3x1(), theta).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d2: f64 = (0..2).map(|c| (feats[i][c] - feats[j][c]).powi(2)).sum();
                let expect = (-d2 / (2.0 * theta * theta)).exp();
                assert!((g.affinity.get2(i, j) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pooling_weights_by_pixel_count() {
        // 2x4 image, superpixel 0 covers 3 pixels of cell 0 and 1 of cell 1
        let a = Grid::from_vec(2, 4, vec![0, 0, 0, 1, 0, 1, 1, 1]).unwrap();
        let sp = SuperpixelMap::new(a).unwrap();
        let map = pooling_map(&sp, 1, 2).unwrap();
        assert_eq!(map.rows[0], vec![(0, 0.75), (1, 0.25)]);
        assert_eq!(map.rows[1], vec![(0, 0.25), (1, 0.75)]);
        assert!(matches!(pooling_map(&sp, 1, 3), Err(Error::Resolution(_))));
    }
}
