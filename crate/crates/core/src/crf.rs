//! Pixel-level refinement of superpixel instance masks with a fully
//! connected CRF, solved by mean-field iteration with exact all-pairs
//! message passing.
//!
//! Labels are 0 (background) and `1..=P`. The unary potential of person `i`
//! at pixel `k` is `Q_k·P^i_k + Q_k`, background gets `1 − Q_k + ε`, and the
//! energy of a potential `ψ` is `−ln max(ψ, 1e-9)`. The pairwise term is a
//! Potts penalty weighted by a sum of three Gaussian kernels: learned
//! features, a bilateral position/colour term and a spatial term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::scene::Grid;

/// Added to the background potential so that it never vanishes.
pub const BACKGROUND_EPS: f64 = 1e-3;
pub const POTENTIAL_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrfConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    /// Bandwidth of the learned-feature kernel.
    pub theta: f64,
    /// Position bandwidth of the bilateral kernel, pixels.
    pub theta_bp: f64,
    /// Colour bandwidth of the bilateral kernel.
    pub theta_bi: f64,
    /// Bandwidth of the spatial kernel, pixels.
    pub theta_s: f64,
    pub iterations: usize,
    pub potts_strength: f64,
}

impl Default for CrfConfig {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            theta: 1.0,
            theta_bp: 20.0,
            theta_bi: 0.1,
            theta_s: 3.0,
            iterations: 10,
            potts_strength: 1.0,
        }
    }
}

impl CrfConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w1, self.w2, self.w3, self.potts_strength];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("CRF weights and potts_strength must be >= 0".into()));
        }
        let bands = [self.theta, self.theta_bp, self.theta_bi, self.theta_s];
        if bands.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::Config("CRF bandwidths must be > 0".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("CRF needs at least one iteration".into()));
        }
        Ok(())
    }
}

/// Everything the CRF sees at pixel resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfProblem {
    /// Foreground probability per pixel.
    pub q: Grid<f64>,
    /// Superpixel-level instance masks, one per person label.
    pub masks: Vec<Grid<bool>>,
    /// `H×W×C_F` learned features.
    pub features: Tensor,
    /// `H×W×3` colours.
    pub image: Tensor,
}

/// Per-pixel inputs of the pairwise kernel.
#[derive(Debug, Clone, Copy)]
pub struct PixelFeatures<'a> {
    pub feature: &'a [f64],
    pub color: &'a [f64],
    /// `(y, x)` in pixels.
    pub position: (f64, f64),
}

impl CrfProblem {
    pub fn new(q: Grid<f64>, masks: Vec<Grid<bool>>, features: Tensor, image: Tensor) -> Result<Self> {
        let (h, w) = (q.height(), q.width());
        if masks.iter().any(|m| m.height() != h || m.width() != w) {
            return Err(Error::arg("instance masks differ in size from Q"));
        }
        let fs = features.shape();
        if fs.len() != 3 || fs[0] != h || fs[1] != w {
            return Err(Error::arg(format!("features must be {h}×{w}×C, got {fs:?}")));
        }
        if image.shape() != [h, w, 3] {
            return Err(Error::arg(format!("image must be {h}×{w}×3, got {:?}", image.shape())));
        }
        if q.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("Q must lie in [0, 1]"));
        }
        Ok(Self {
            q,
            masks,
            features,
            image,
        })
    }

    pub fn pixels(&self) -> usize {
        self.q.len()
    }

    /// Background plus one label per person.
    pub fn labels(&self) -> usize {
        self.masks.len() + 1
    }

    pub fn pixel(&self, k: usize) -> PixelFeatures<'_> {
        let c = self.features.shape()[2];
        let w = self.q.width();
        PixelFeatures {
            feature: &self.features.data()[k * c..(k + 1) * c],
            color: &self.image.data()[k * 3..(k + 1) * 3],
            position: ((k / w) as f64, (k % w) as f64),
        }
    }
}

/// Unary potential `ψ_u(V_k = label)`.
pub fn unary(problem: &CrfProblem, k: usize, label: usize) -> f64 {
    let q = problem.q.data()[k];
    if label == 0 {
        1.0 - q + BACKGROUND_EPS
    } else {
        let inside = if problem.masks[label - 1].data()[k] { 1.0 } else { 0.0 };
        q * inside + q
    }
}

/// Energy contribution `−ln ψ_u` with the floor clamp.
pub fn unary_energy(problem: &CrfProblem, k: usize, label: usize) -> f64 {
    -unary(problem, k, label).max(POTENTIAL_FLOOR).ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn pairwise_kernel(cfg: &CrfConfig, a: PixelFeatures<'_>, b: PixelFeatures<'_>) -> f64 {
    let dp = (a.position.0 - b.position.0).powi(2) + (a.position.1 - b.position.1).powi(2);
    let df = sq_dist(a.feature, b.feature);
    let di = sq_dist(a.color, b.color);
    cfg.w1 * (-df / (2.0 * cfg.theta * cfg.theta)).exp()
        + cfg.w2 * (-dp / (2.0 * cfg.theta_bp * cfg.theta_bp) - di / (2.0 * cfg.theta_bi * cfg.theta_bi)).exp()
        + cfg.w3 * (-dp / (2.0 * cfg.theta_s * cfg.theta_s)).exp()
}

/// Dense kernel matrix with a zero diagonal, row-major `n×n`.
fn kernel_matrix(problem: &CrfProblem, cfg: &CrfConfig) -> Vec<f32> {
    let n = problem.pixels();
    let mut k = vec![0.0f32; n * n];
    for i in 0..n {
        let pi = problem.pixel(i);
        for j in 0..i {
            let v = pairwise_kernel(cfg, pi, problem.pixel(j)) as f32;
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Energy of a full labelling: unaries plus the Potts penalty over every
/// unordered pixel pair.
pub fn energy(problem: &CrfProblem, cfg: &CrfConfig, labels: &[u16]) -> f64 {
    let n = problem.pixels();
    let mut e: f64 = (0..n).map(|k| unary_energy(problem, k, labels[k] as usize)).sum();
    if cfg.potts_strength > 0.0 {
        for i in 0..n {
            for j in 0..i {
                if labels[i] != labels[j] {
                    e += cfg.potts_strength * pairwise_kernel(cfg, problem.pixel(i), problem.pixel(j));
                }
            }
        }
    }
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanField {
    /// Marginals after each iteration, each `n×L`; the last is final.
    pub history: Vec<Tensor>,
    /// Per-pixel argmax of the final marginals, lowest label on ties.
    pub labels: Grid<u16>,
}

impl MeanField {
    pub fn marginals(&self) -> &Tensor {
        self.history.last().unwrap()
    }
}

fn normalize_exp(row: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Mean-field inference. Marginals start at the normalised unaries; each
/// iteration sets `Q_k(l) ∝ exp(−U_k(l) − μ Σ_{j≠k} κ(k,j) (1 − Q_j(l)))`.
pub fn mean_field(problem: &CrfProblem, cfg: &CrfConfig) -> Result<MeanField> {
    cfg.validate()?;
    let (n, l) = (problem.pixels(), problem.labels());
    let u: Vec<f64> = (0..n * l).map(|i| unary_energy(problem, i / l, i % l)).collect();
    let mut q: Vec<f64> = u.iter().map(|v| -v).collect();
    q.chunks_mut(l).for_each(normalize_exp);

    let coupled = cfg.potts_strength > 0.0 && cfg.w1 + cfg.w2 + cfg.w3 > 0.0;
    let kernel = if coupled { kernel_matrix(problem, cfg) } else { Vec::new() };
    let row_sums: Vec<f64> = if coupled {
        kernel.chunks(n).map(|r| r.iter().map(|&v| v as f64).sum()).collect()
    } else {
        Vec::new()
    };
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut kq = vec![0.0f64; n * l];
    for _ in 0..cfg.iterations {
        let mut next = vec![0.0f64; n * l];
        if coupled {
            // kq = K · Q
            kq.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                let row = &kernel[i * n..(i + 1) * n];
                let out = &mut kq[i * l..(i + 1) * l];
                for (j, &kij) in row.iter().enumerate() {
                    if kij != 0.0 {
                        let kij = kij as f64;
                        for (o, qv) in out.iter_mut().zip(&q[j * l..(j + 1) * l]) {
                            *o += kij * qv;
                        }
                    }
                }
            }
        }
        for i in 0..n {
            for lab in 0..l {
                let msg = if coupled {
                    cfg.potts_strength * (row_sums[i] - kq[i * l + lab])
                } else {
                    0.0
                };
                next[i * l + lab] = -u[i * l + lab] - msg;
            }
            normalize_exp(&mut next[i * l..(i + 1) * l]);
        }
        q = next;
        history.push(Tensor::new(vec![n, l], q.clone())?);
    }
    let labels: Vec<u16> = q
        .chunks(l)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u16
        })
        .collect();
    Ok(MeanField {
        history,
        labels: Grid::from_vec(problem.q.height(), problem.q.width(), labels).unwrap(),
    })
}

/// Per-pixel argmax of the unaries alone.
pub fn unary_argmax(problem: &CrfProblem) -> Vec<u16> {
    let l = problem.labels();
    (0..problem.pixels())
        .map(|k| {
            let mut best = 0;
            for lab in 1..l {
                if unary_energy(problem, k, lab) < unary_energy(problem, k, best) {
                    best = lab;
                }
            }
            best as u16
        })
        .collect()
}

/// Largest total pairwise pull any pixel can receive: `μ Σ_j κ(k,j)`.
pub fn influence_bound(problem: &CrfProblem, cfg: &CrfConfig, k: usize) -> f64 {
    let pk = problem.pixel(k);
    cfg.potts_strength
        * (0..problem.pixels())
            .filter(|&j| j != k)
            .map(|j| pairwise_kernel(cfg, pk, problem.pixel(j)))
            .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(q: Vec<f64>, masks: Vec<Vec<bool>>, w: usize) -> CrfProblem {
        let n = q.len();
        let h = n / w;
        CrfProblem::new(
            Grid::from_vec(h, w, q).unwrap(),
            masks.into_iter().map(|m| Grid::from_vec(h, w, m).unwrap()).collect(),
            Tensor::zeros(&[h, w, 2]),
            Tensor::zeros(&[h, w, 3]),
        )
        .unwrap()
    }

    #[test]
    fn unary_values() {
        let p = tiny(vec![1.0, 0.0], vec![vec![true, false], vec![false, false]], 2);
        assert_eq!(unary(&p, 0, 1), 2.0);
        assert!((unary_energy(&p, 0, 1) + 2f64.ln()).abs() < 1e-15);
        assert_eq!(unary(&p, 0, 2), 1.0);
        assert_eq!(unary(&p, 1, 1), 0.0);
        assert!((unary_energy(&p, 1, 1) - (-(1e-9f64).ln())).abs() < 1e-9);
        assert!((unary(&p, 1, 0) - 1.001).abs() < 1e-15);
    }

    #[test]
    fn identical_pixels_give_weight_sum() {
        let cfg = CrfConfig {
            w1: 0.5,
            w2: 2.0,
            w3: 0.25,
            ..CrfConfig::default()
        };
        let f = PixelFeatures {
            feature: &[0.3, 0.1],
            color: &[0.2, 0.2, 0.9],
            position: (3.0, 4.0),
        };
        assert!((pairwise_kernel(&cfg, f, f) - 2.75).abs() < 1e-15);
    }

    #[test]
    fn zero_potts_is_unary_argmax() {
        let p = tiny(
            vec![0.9, 0.2, 0.6, 0.4],
            vec![vec![true, true, false, false], vec![false, false, true, true]],
            2,
        );
        let cfg = CrfConfig {
            potts_strength: 0.0,
            ..CrfConfig::default()
        };
        let mf = mean_field(&p, &cfg).unwrap();
        assert_eq!(mf.labels.data(), unary_argmax(&p).as_slice());
        assert_eq!(mf.labels.data(), &[1, 0, 2, 2]);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = CrfConfig {
            theta_s: 0.0,
            ..CrfConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
