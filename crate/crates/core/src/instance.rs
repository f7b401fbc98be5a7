//! Person instances from an affinity graph: spectral clustering of the
//! foreground superpixels, then fusion with the instance-agnostic parsing.

use std::collections::VecDeque;

use crate::affinity::{majority_vote, AffinityGraph};
use crate::error::{Error, Result};
use crate::numcore::{kmeans, sym_eigs, Tensor};
use crate::parsernet::{rounded_count, upsample_bilinear, ParsingMap};
use crate::scene::{Grid, LabeledScene, SuperpixelMap, BACKGROUND, NUM_CLASSES};

/// Instance-aware parsing: per-pixel person id and part category.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceParsing {
    /// 0 for background, otherwise `1..=P̂`.
    pub instance_ids: Grid<u16>,
    pub categories: Grid<u8>,
    /// One score in `[0, 1]` per instance, indexed by id − 1.
    pub confidences: Vec<f64>,
}

impl InstanceParsing {
    pub fn new(instance_ids: Grid<u16>, categories: Grid<u8>, confidences: Vec<f64>) -> Result<Self> {
        if !instance_ids.same_dims(&categories) {
            return Err(Error::Invariant("instance and category maps differ in size".into()));
        }
        let p = confidences.len();
        let mut seen = vec![false; p];
        for (k, (&id, &c)) in instance_ids.data().iter().zip(categories.data()).enumerate() {
            if (id > 0) != (c > 0) {
                return Err(Error::Invariant(format!(
                    "pixel {k}: instance {id} with category {c}"
                )));
            }
            if c as usize >= NUM_CLASSES {
                return Err(Error::Invariant(format!("pixel {k}: category {c} out of range")));
            }
            if id as usize > p {
                return Err(Error::Invariant(format!(
                    "pixel {k}: instance {id} but only {p} confidences"
                )));
            }
            if id > 0 {
                seen[id as usize - 1] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Invariant(format!("instance {} has no pixels", i + 1)));
        }
        if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Invariant(format!("confidence {c} outside [0, 1]")));
        }
        Ok(Self {
            instance_ids,
            categories,
            confidences,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            instance_ids: Grid::filled(height, width, 0),
            categories: Grid::filled(height, width, BACKGROUND),
            confidences: Vec::new(),
        }
    }

    /// Ground truth recast as a prediction with unit confidences.
    pub fn from_scene(scene: &LabeledScene) -> Self {
        let ids = crate::affinity::accordance_map(scene).0;
        Self {
            instance_ids: ids,
            categories: scene.part_labels.clone(),
            confidences: vec![1.0; scene.person_count()],
        }
    }

    pub fn instance_count(&self) -> usize {
        self.confidences.len()
    }

    pub fn mask(&self, id: u16) -> Grid<bool> {
        self.instance_ids.map(|v| v == id)
    }
}

/// Parsing at image resolution: per-pixel argmax and foreground probability.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelParsing {
    pub categories: Grid<u8>,
    /// `Q`, the probability that a pixel is not background.
    pub foreground: Grid<f64>,
}

impl PixelParsing {
    /// Bilinearly upsamples the parsing probabilities to `height×width`.
    pub fn from_parsing(parsing: &ParsingMap, height: usize, width: usize) -> Result<Self> {
        let (ph, pw) = (parsing.height(), parsing.width());
        if ph == 0 || height % ph != 0 || width % pw != 0 || height / ph != width / pw {
            return Err(Error::Resolution(format!(
                "parsing {ph}x{pw} does not tile {height}x{width} with a common factor"
            )));
        }
        let probs = upsample_bilinear(&parsing.probabilities, height / ph)?;
        let up = ParsingMap {
            logits: probs.clone(),
            probabilities: probs,
        };
        let q = up.foreground();
        Ok(Self {
            categories: up.argmax(),
            foreground: Grid::from_vec(height, width, q.into_data()).unwrap(),
        })
    }

    pub fn from_labels(labels: &Grid<u8>) -> Self {
        Self {
            categories: labels.clone(),
            foreground: labels.map(|c| if c > 0 { 1.0 } else { 0.0 }),
        }
    }
}

/// Superpixels whose majority pixel category is not background.
pub fn foreground_nodes(pixels: &PixelParsing, sp: &SuperpixelMap) -> Result<Vec<bool>> {
    if !pixels.categories.same_dims(&sp.assignment) {
        return Err(Error::arg("parsing and superpixel map differ in size"));
    }
    Ok(sp
        .members()
        .iter()
        .map(|m| majority_vote(m.iter().map(|&k| pixels.categories.data()[k])) != BACKGROUND)
        .collect())
}

/// Row-normalised embedding from the `k` smallest eigenvectors of the
/// symmetric normalised Laplacian of `a`.
pub fn spectral_embedding(a: &Tensor, k: usize) -> Result<Tensor> {
    let n = a.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a.row(i).iter().sum();
            if d > 0.0 {
                d.powf(-0.5)
            } else {
                0.0
            }
        })
        .collect();
    let mut l = Tensor::identity(n);
    for i in 0..n {
        for j in 0..n {
            let v = l.get2(i, j) - inv_sqrt[i] * a.get2(i, j) * inv_sqrt[j];
            l.set2(i, j, v);
        }
    }
    // exact symmetry despite rounding
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (l.get2(i, j) + l.get2(j, i));
            l.set2(i, j, v);
            l.set2(j, i, v);
        }
    }
    let (_, mut vectors) = sym_eigs(&l, k)?;
    for r in 0..n {
        let row = &mut vectors.data_mut()[r * k..(r + 1) * k];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(vectors)
}

/// Spectral clustering of the nodes flagged in `foreground` into at most
/// `k` groups. Returns a label per node: 0 for excluded nodes, otherwise a
/// cluster id numbered `1..` in order of first appearance.
pub fn cluster_nodes(affinity: &Tensor, foreground: &[bool], k: usize, seed: u64) -> Result<Vec<u16>> {
    let n = foreground.len();
    if affinity.shape() != [n, n] {
        return Err(Error::arg("affinity size differs from node count"));
    }
    let fg: Vec<usize> = (0..n).filter(|&i| foreground[i]).collect();
    let mut out = vec![0u16; n];
    if fg.is_empty() {
        return Ok(out);
    }
    let k = k.clamp(1, fg.len());
    let mut sub = Tensor::zeros(&[fg.len(), fg.len()]);
    for (a, &i) in fg.iter().enumerate() {
        for (b, &j) in fg.iter().enumerate() {
            sub.set2(a, b, affinity.get2(i, j));
        }
    }
    let labels = if k == 1 {
        vec![0; fg.len()]
    } else {
        kmeans(&spectral_embedding(&sub, k)?, k, seed)?
    };
    let mut ids = vec![0u16; k];
    let mut next = 0u16;
    for (&node, &l) in fg.iter().zip(&labels) {
        if ids[l] == 0 {
            next += 1;
            ids[l] = next;
        }
        out[node] = ids[l];
    }
    Ok(out)
}

/// Paints per-superpixel labels onto pixels.
pub fn paint(sp: &SuperpixelMap, node_labels: &[u16]) -> Grid<u16> {
    sp.assignment.map(|s| node_labels[s as usize])
}

/// Combines instance masks with the parsing. A pixel keeps an instance only
/// where the parsing says foreground; foreground pixels without an instance
/// join the instance of the nearest labelled superpixel (breadth-first over
/// superpixel adjacency, smallest id on ties) or become background when no
/// instance exists. Instances left without pixels are dropped and the rest
/// renumbered. Confidence is the mean foreground probability over an
/// instance's pixels.
pub fn fuse(instance_ids: &Grid<u16>, pixels: &PixelParsing, sp: &SuperpixelMap) -> Result<InstanceParsing> {
    if !instance_ids.same_dims(&pixels.categories) || !instance_ids.same_dims(&sp.assignment) {
        return Err(Error::arg("fuse inputs differ in size"));
    }
    let members = sp.members();
    // instance per superpixel by majority over its labelled pixels
    let node_ids: Vec<u16> = members
        .iter()
        .map(|m| majority_vote(m.iter().map(|&k| instance_ids.data()[k])))
        .collect();
    let adjacency = sp.adjacency();
    let mut nearest: Vec<Option<u16>> = vec![None; sp.count];
    let mut resolved = vec![false; sp.count];
    let resolve = |start: usize| -> Option<u16> {
        let mut dist = vec![usize::MAX; adjacency.len()];
        let mut queue = VecDeque::from([start]);
        dist[start] = 0;
        let mut found: Option<(usize, u16)> = None;
        while let Some(s) = queue.pop_front() {
            if let Some((d, _)) = found {
                if dist[s] > d {
                    break;
                }
            }
            if node_ids[s] > 0 {
                found = Some(match found {
                    Some((d, id)) => (d, id.min(node_ids[s])),
                    None => (dist[s], node_ids[s]),
                });
                continue;
            }
            for &t in &adjacency[s] {
                if dist[t] == usize::MAX {
                    dist[t] = dist[s] + 1;
                    queue.push_back(t);
                }
            }
        }
        found.map(|(_, id)| id)
    };

    let (h, w) = (instance_ids.height(), instance_ids.width());
    let mut ids = Grid::filled(h, w, 0u16);
    let mut cats = Grid::filled(h, w, BACKGROUND);
    for k in 0..h * w {
        let c = pixels.categories.data()[k];
        if c == BACKGROUND {
            continue;
        }
        let mut id = instance_ids.data()[k];
        if id == 0 {
            let s = sp.assignment.data()[k] as usize;
            if !resolved[s] {
                nearest[s] = resolve(s);
                resolved[s] = true;
            }
            id = nearest[s].unwrap_or(0);
        }
        if id > 0 {
            ids.data_mut()[k] = id;
            cats.data_mut()[k] = c;
        }
    }

    // renumber in order of id, dropping empty instances
    let max_id = ids.data().iter().copied().max().unwrap_or(0) as usize;
    let mut sums = vec![(0.0f64, 0usize); max_id + 1];
    for (k, &id) in ids.data().iter().enumerate() {
        if id > 0 {
            sums[id as usize].0 += pixels.foreground.data()[k];
            sums[id as usize].1 += 1;
        }
    }
    let mut remap = vec![0u16; max_id + 1];
    let mut confidences = Vec::new();
    for (id, &(q, count)) in sums.iter().enumerate().skip(1) {
        if count > 0 {
            confidences.push((q / count as f64).clamp(0.0, 1.0));
            remap[id] = confidences.len() as u16;
        }
    }
    let ids = ids.map(|v| remap[v as usize]);
    InstanceParsing::new(ids, cats, confidences)
}

/// Spectral clustering of the foreground superpixels followed by fusion.
/// The person count is `round(count_pred)` clamped to the number of
/// foreground superpixels.
pub fn cluster_instances(
    pred: &AffinityGraph,
    parsing: &ParsingMap,
    sp: &SuperpixelMap,
    count_pred: f64,
    seed: u64,
) -> Result<InstanceParsing> {
    let pixels = PixelParsing::from_parsing(parsing, sp.height(), sp.width())?;
    cluster_pixels(pred, &pixels, sp, rounded_count(count_pred), seed)
}

/// As [`cluster_instances`] with parsing already at image resolution and an
/// integer person count.
pub fn cluster_pixels(
    pred: &AffinityGraph,
    pixels: &PixelParsing,
    sp: &SuperpixelMap,
    count: usize,
    seed: u64,
) -> Result<InstanceParsing> {
    let fg = foreground_nodes(pixels, sp)?;
    let labels = cluster_nodes(&pred.affinity, &fg, count, seed)?;
    fuse(&paint(sp, &labels), pixels, sp)
}

/// Adjusted Rand index between two labellings of the same items. Two
/// single-cluster labellings score 1.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> f64
where
    A: Copy + Ord,
    B: Copy + Ord,
{
    assert_eq!(a.len(), b.len(), "labellings differ in length");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut table = std::collections::BTreeMap::<(A, B), u64>::new();
    let mut rows = std::collections::BTreeMap::<A, u64>::new();
    let mut cols = std::collections::BTreeMap::<B, u64>::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1) / 2) as f64;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = rows.values().map(|&v| c2(v)).sum();
    let sb: f64 = cols.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n as u64);
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
