//! Grid-seeded local clustering on colour and position (simplified SLIC),
//! followed by connectivity enforcement.

use super::{Grid, LabeledScene};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const ITERATIONS: usize = 10;
/// Colour distance (RGB, unit range) that weighs as much as one grid step.
pub const DEFAULT_COMPACTNESS: f64 = 0.06;

/// Partition of an image into 4-connected superpixels with ids `0..count`,
/// numbered in raster order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    pub assignment: Grid<u32>,
    pub count: usize,
}

impl SuperpixelMap {
    /// Builds a map from an arbitrary labelling, checking the id invariants.
    pub fn new(assignment: Grid<u32>) -> Result<Self> {
        let count = assignment.data().iter().map(|&v| v as usize + 1).max().unwrap_or(0);
        let mut seen = vec![false; count];
        for &v in assignment.data() {
            seen[v as usize] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Invariant("superpixel ids are not contiguous".into()));
        }
        Ok(Self { assignment, count })
    }

    pub fn height(&self) -> usize {
        self.assignment.height()
    }

    pub fn width(&self) -> usize {
        self.assignment.width()
    }

    /// Pixel indices of every superpixel.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (k, &s) in self.assignment.data().iter().enumerate() {
            out[s as usize].push(k);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.count];
        for &s in self.assignment.data() {
            out[s as usize] += 1;
        }
        out
    }

    /// Sorted neighbour lists under 4-adjacency.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let (h, w) = (self.height(), self.width());
        let mut adj = vec![Vec::new(); self.count];
        let a = &self.assignment;
        for y in 0..h {
            for x in 0..w {
                let s = a.get(y, x) as usize;
                if x + 1 < w {
                    let t = a.get(y, x + 1) as usize;
                    if s != t {
                        adj[s].push(t);
                        adj[t].push(s);
                    }
                }
                if y + 1 < h {
                    let t = a.get(y + 1, x) as usize;
                    if s != t {
                        adj[s].push(t);
                        adj[t].push(s);
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// True when every superpixel forms one 4-connected component.
    pub fn is_connected(&self) -> bool {
        let (_, components) = components(&self.assignment);
        components == self.count
    }
}

pub fn make_superpixels(scene: &LabeledScene, target_size: usize) -> Result<SuperpixelMap> {
    slic(&scene.image, target_size, DEFAULT_COMPACTNESS)
}

/// Superpixels of roughly `target_size` pixels on an `H×W×3` image.
pub fn slic(image: &Tensor, target_size: usize, compactness: f64) -> Result<SuperpixelMap> {
    if target_size < 4 {
        return Err(Error::arg("superpixel target size must be at least 4"));
    }
    if image.shape().len() != 3 || image.shape()[2] != 3 {
        return Err(Error::arg(format!("expected H×W×3 image, got {:?}", image.shape())));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let step = (target_size as f64).sqrt();
    let nx = ((w as f64 / step).round() as usize).clamp(1, w);
    let ny = ((h as f64 / step).round() as usize).clamp(1, h);
    let px = image.data();

    let mut labels = Grid::from_fn(h, w, |y, x| ((y * ny / h) * nx + x * nx / w) as u32);
    let k = nx * ny;
    // centers: r, g, b, y, x
    let mut centers = vec![[0.0f64; 5]; k];
    let recenter = |labels: &Grid<u32>, centers: &mut Vec<[f64; 5]>| {
        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for y in 0..h {
            for x in 0..w {
                let c = labels.get(y, x) as usize;
                let i = (y * w + x) * 3;
                let a = &mut acc[c];
                a[0] += px[i];
                a[1] += px[i + 1];
                a[2] += px[i + 2];
                a[3] += y as f64 + 0.5;
                a[4] += x as f64 + 0.5;
                a[5] += 1.0;
            }
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                for d in 0..5 {
                    c[d] = a[d] / a[5];
                }
            }
        }
    };
    recenter(&labels, &mut centers);

    let inv_m2 = 1.0 / (compactness * compactness);
    let inv_s2 = 1.0 / (step * step);
    for _ in 0..ITERATIONS {
        for y in 0..h {
            let gy = y * ny / h;
            for x in 0..w {
                let gx = x * nx / w;
                let i = (y * w + x) * 3;
                let (py, pxx) = (y as f64 + 0.5, x as f64 + 0.5);
                let mut best = labels.get(y, x);
                let mut best_d = f64::INFINITY;
                for cy in gy.saturating_sub(1)..(gy + 2).min(ny) {
                    for cx in gx.saturating_sub(1)..(gx + 2).min(nx) {
                        let c = cy * nx + cx;
                        let ctr = &centers[c];
                        let dc = (px[i] - ctr[0]).powi(2) + (px[i + 1] - ctr[1]).powi(2) + (px[i + 2] - ctr[2]).powi(2);
                        let ds = (py - ctr[3]).powi(2) + (pxx - ctr[4]).powi(2);
                        let d = dc * inv_m2 + ds * inv_s2;
                        if d < best_d {
                            best_d = d;
                            best = c as u32;
                        }
                    }
                }
                labels.set(y, x, best);
            }
        }
        recenter(&labels, &mut centers);
    }

    let assignment = enforce_connectivity(&labels, (target_size / 4).max(1));
    SuperpixelMap::new(assignment)
}

/// 4-connected components of equal labels; returns component ids per pixel
/// (raster order of first pixel) and the component count.
fn components(labels: &Grid<u32>) -> (Grid<u32>, usize) {
    let (h, w) = (labels.height(), labels.width());
    let mut comp = Grid::filled(h, w, u32::MAX);
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if comp.data()[start] != u32::MAX {
            continue;
        }
        let l = labels.data()[start];
        comp.data_mut()[start] = next;
        stack.push(start);
        while let Some(k) = stack.pop() {
            let (y, x) = (k / w, k % w);
            let mut visit = |nk: usize, comp: &mut Grid<u32>| {
                if comp.data()[nk] == u32::MAX && labels.data()[nk] == l {
                    comp.data_mut()[nk] = next;
                    stack.push(nk);
                }
            };
            if x > 0 {
                visit(k - 1, &mut comp);
            }
            if x + 1 < w {
                visit(k + 1, &mut comp);
            }
            if y > 0 {
                visit(k - w, &mut comp);
            }
            if y + 1 < h {
                visit(k + w, &mut comp);
            }
        }
        next += 1;
    }
    (comp, next as usize)
}

/// Splits labels into connected components and merges components smaller
/// than `min_size` into the neighbour they share the longest border with.
fn enforce_connectivity(labels: &Grid<u32>, min_size: usize) -> Grid<u32> {
    let (h, w) = (labels.height(), labels.width());
    let (comp, n) = components(labels);
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut size = vec![0usize; n];
    for &c in comp.data() {
        size[c as usize] += 1;
    }

    loop {
        // smallest undersized group, ties to lowest id
        let mut victim = None;
        for c in 0..n {
            if find(&mut parent, c) == c && size[c] < min_size {
                match victim {
                    Some(v) if size[v] <= size[c] => {}
                    _ => victim = Some(c),
                }
            }
        }
        let Some(v) = victim else { break };
        let mut border = std::collections::BTreeMap::<usize, usize>::new();
        for y in 0..h {
            for x in 0..w {
                let a = find(&mut parent, comp.get(y, x) as usize);
                let mut note = |b: u32, border: &mut std::collections::BTreeMap<usize, usize>| {
                    let b = find(&mut parent, b as usize);
                    if a == v && b != v {
                        *border.entry(b).or_default() += 1;
                    } else if b == v && a != v {
                        *border.entry(a).or_default() += 1;
                    }
                };
                if x + 1 < w {
                    note(comp.get(y, x + 1), &mut border);
                }
                if y + 1 < h {
                    note(comp.get(y + 1, x), &mut border);
                }
            }
        }
        let Some((&target, _)) = border.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else {
            break; // whole image is one group
        };
        parent[v] = target;
        size[target] += size[v];
    }

    // raster-order relabel
    let mut ids = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut out = Grid::filled(h, w, 0u32);
    for k in 0..h * w {
        let r = find(&mut parent, comp.data()[k] as usize);
        if ids[r] == u32::MAX {
            ids[r] = next;
            next += 1;
        }
        out.data_mut()[k] = ids[r];
    }
    out
}
