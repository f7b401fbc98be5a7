use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Gradients, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::arg(format!("grad_check eps {eps} outside [1e-6, 1e-3]")));
    }
    Ok(())
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("objective under gradient check".into()))
    }
}

fn relative(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Compares the analytic gradient returned by `f` with central differences
/// at every coordinate of `params`; returns the worst relative error
/// `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(mut f: F, params: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    check_eps(eps)?;
    let (value, analytic) = f(params)?;
    finite(value)?;
    if analytic.shape() != params.shape() {
        return Err(Error::arg("gradient shape differs from parameter shape"));
    }
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for i in 0..params.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = finite(f(&probe)?.0)?;
        probe.data_mut()[i] = orig - eps;
        let down = finite(f(&probe)?.0)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(relative(analytic.data()[i], (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Gradient check over a named parameter set. When `per_tensor` is set, only
/// that many seeded-random coordinates of each tensor are probed.
pub fn grad_check_params<F>(
    mut f: F,
    params: &ParamSet,
    eps: f64,
    per_tensor: Option<usize>,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&ParamSet) -> Result<(f64, Gradients)>,
{
    check_eps(eps)?;
    let (value, analytic) = f(params)?;
    finite(value)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (name, tensor) in params {
        let grad = analytic
            .get(name)
            .ok_or_else(|| Error::arg(format!("no gradient for parameter {name}")))?;
        if grad.shape() != tensor.shape() {
            return Err(Error::arg(format!("gradient shape mismatch for {name}")));
        }
        let coords: Vec<usize> = match per_tensor {
            Some(m) if m < tensor.len() => sample(&mut rng, tensor.len(), m).into_vec(),
            _ => (0..tensor.len()).collect(),
        };
        for i in coords {
            let orig = tensor.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let up = finite(f(&probe)?.0)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let down = finite(f(&probe)?.0)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            worst = worst.max(relative(grad.data()[i], (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}
