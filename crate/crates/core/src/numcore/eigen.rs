use super::tensor::Tensor;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// The `k` smallest eigenpairs of a symmetric matrix, by cyclic Jacobi
/// rotations. Eigenvalues ascend; eigenvectors are the columns of the
/// returned `N×k` tensor.
pub fn sym_eigs(m: &Tensor, k: usize) -> Result<(Vec<f64>, Tensor)> {
    if m.shape().len() != 2 || m.shape()[0] != m.shape()[1] {
        return Err(Error::arg(format!("sym_eigs needs a square matrix, got {:?}", m.shape())));
    }
    let n = m.shape()[0];
    if k == 0 || k > n {
        return Err(Error::arg(format!("sym_eigs: k = {k} outside [1, {n}]")));
    }
    if !m.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::Contract("sym_eigs input is not symmetric".into()));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("sym_eigs input".into()));
    }

    let (values, vectors) = jacobi(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let mut out = Tensor::zeros(&[n, k]);
    let mut vals = Vec::with_capacity(k);
    for (col, &src) in order.iter().take(k).enumerate() {
        vals.push(values[src]);
        // Sign convention: largest-magnitude component positive.
        let mut pivot = 0.0f64;
        for r in 0..n {
            let v = vectors[r * n + src];
            if v.abs() > pivot.abs() + 1e-12 {
                pivot = v;
            }
        }
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            out.set2(r, col, sign * vectors[r * n + src]);
        }
    }
    Ok((vals, out))
}

/// Full decomposition: returns (diagonal, row-major eigenvector matrix with
/// eigenvectors as columns).
fn jacobi(m: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows();
    let mut a = m.data().to_vec();
    // symmetrize exactly so rotations stay consistent
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    let mut v = Tensor::identity(n).into_data();
    let scale = m.data().iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= OFF_DIAGONAL_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for r in 0..n {
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    a[r * n + p] = c * arp - s * arq;
                    a[r * n + q] = s * arp + c * arq;
                }
                for r in 0..n {
                    let apr = a[p * n + r];
                    let aqr = a[q * n + r];
                    a[p * n + r] = c * apr - s * aqr;
                    a[q * n + r] = s * apr + c * aqr;
                }
                for r in 0..n {
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}
