use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centers: Tensor,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_trace: Vec<f64>,
}

/// Lloyd's algorithm with farthest-point initialisation. The seed only picks
/// the first center; everything after that is deterministic.
pub fn kmeans(points: &Tensor, k: usize, seed: u64) -> Result<Vec<usize>> {
    Ok(kmeans_fit(points, k, seed)?.labels)
}

pub fn kmeans_fit(points: &Tensor, k: usize, seed: u64) -> Result<KMeansFit> {
    if points.shape().len() != 2 {
        return Err(Error::arg("kmeans expects an N×d tensor"));
    }
    let (n, d) = (points.rows(), points.cols());
    if k == 0 || k > n {
        return Err(Error::arg(format!("kmeans: k = {k} outside [1, {n}]")));
    }
    let x = points.data();
    let dist2 = |i: usize, c: &[f64]| -> f64 {
        x[i * d..(i + 1) * d]
            .iter()
            .zip(c)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![0.0; k * d];
    let first = rng.random_range(0..n);
    centers[..d].copy_from_slice(&x[first * d..(first + 1) * d]);
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(i, &centers[..d])).collect();
    for c in 1..k {
        let mut best = 0;
        for i in 1..n {
            if nearest[i] > nearest[best] {
                best = i;
            }
        }
        centers[c * d..(c + 1) * d].copy_from_slice(&x[best * d..(best + 1) * d]);
        for (i, slot) in nearest.iter_mut().enumerate() {
            *slot = slot.min(dist2(i, &centers[c * d..(c + 1) * d]));
        }
    }

    let mut labels = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        let mut wcss = 0.0;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dd = dist2(i, &centers[c * d..(c + 1) * d]);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            wcss += best_d;
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        trace.push(wcss);
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for j in 0..d {
                sums[l * d + j] += x[i * d + j];
            }
        }
        for c in 0..k {
            // empty clusters keep their previous center
            if counts[c] > 0 {
                for j in 0..d {
                    centers[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
    }

    Ok(KMeansFit {
        labels,
        centers: Tensor::new(vec![k, d], centers)?,
        wcss_trace: trace,
    })
}

/// Within-cluster sum of squares of an arbitrary labelling.
pub fn wcss(points: &Tensor, labels: &[usize], k: usize) -> f64 {
    let d = points.cols();
    let x = points.data();
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for j in 0..d {
            sums[l * d + j] += x[i * d + j];
        }
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            (0..d)
                .map(|j| {
                    let mean = sums[l * d + j] / counts[l] as f64;
                    (x[i * d + j] - mean).powi(2)
                })
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_clouds_split() {
        let mut rows = Vec::new();
        for i in 0..5 {
            rows.push(vec![0.1 * i as f64, 0.0]);
            rows.push(vec![10.0, 10.0 + 0.1 * i as f64]);
        }
        let pts = Tensor::from_rows(&rows).unwrap();
        let labels = kmeans(&pts, 2, 3).unwrap();
        for i in 0..5 {
            assert_eq!(labels[2 * i], labels[0]);
            assert_eq!(labels[2 * i + 1], labels[1]);
        }
        assert_ne!(labels[0], labels[1]);
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let pts = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![5.0], vec![2.5]]).unwrap();
        let labels = kmeans(&pts, 4, 0).unwrap();
        let mut sorted = labels.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert_eq!(wcss(&pts, &labels, 4), 0.0);
    }

    #[test]
    fn k_larger_than_n_is_an_argument_error() {
        let pts = Tensor::zeros(&[2, 2]);
        assert!(matches!(kmeans(&pts, 3, 0), Err(Error::Argument(_))));
    }
}
